import pytest

from entroprune.benchmark import run_bench
from entroprune.errors import ValidationError


class TestReport:
    def test_schema_and_equivalence(self):
        report = run_bench(32, 4, tokens=40, iters=2, seed=3)
        assert set(report) == {
            "head_dim", "heads", "tokens", "iters", "seed",
            "max_abs_difference", "median_naive_s", "median_fast_s",
            "measured_speedup", "theoretical_speedup",
        }
        assert report["head_dim"] == 32
        assert report["heads"] == 4
        assert report["tokens"] == 40
        assert report["max_abs_difference"] <= 1e-9
        assert report["median_naive_s"] > 0
        assert report["median_fast_s"] > 0
        assert report["measured_speedup"] == pytest.approx(
            report["median_naive_s"] / report["median_fast_s"], rel=1e-12
        )

    def test_theoretical_speedup_at_reference_geometry(self):
        report = run_bench(128, 32, tokens=4, iters=1, seed=0)
        assert report["theoretical_speedup"] == 64.0

    def test_wide_matrices_run_faster_on_the_small_side(self):
        # 16x128 vs 128x128 eigendecompositions leave a wide margin even
        # on a noisy machine
        report = run_bench(128, 16, tokens=60, iters=3, seed=1)
        assert report["measured_speedup"] > 1.5

    def test_equal_dims_near_parity(self):
        # head_dim == heads makes both routes decompose the same size;
        # only bookkeeping differs
        report = run_bench(64, 64, tokens=200, iters=3, seed=2)
        assert 0.7 <= report["measured_speedup"] <= 1.3

    def test_same_seed_same_difference(self):
        a = run_bench(16, 4, tokens=20, iters=1, seed=9)
        b = run_bench(16, 4, tokens=20, iters=1, seed=9)
        assert a["max_abs_difference"] == b["max_abs_difference"]


class TestValidation:
    def test_single_head_rejected(self):
        with pytest.raises(ValidationError):
            run_bench(16, 1, tokens=4, iters=1)

    def test_head_dim_below_heads_rejected(self):
        with pytest.raises(ValidationError):
            run_bench(4, 8, tokens=4, iters=1)

    @pytest.mark.parametrize("kwargs", [dict(tokens=0), dict(iters=0)])
    def test_non_positive_counts_rejected(self, kwargs):
        with pytest.raises(ValidationError):
            run_bench(16, 4, **kwargs)
