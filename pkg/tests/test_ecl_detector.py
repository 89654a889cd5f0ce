import numpy as np
import pytest

from entroprune.ecl_detector import (
    EntropyProfile,
    detect_ecl,
    layerwise_profile,
    profile_csv_text,
    synth_collapse_dump,
    write_profile_csv,
)
from entroprune.errors import NoCollapseError, ValidationError
from entroprune.spectral_fastpath import entropy_fast


class TestDetect:
    def test_known_profile(self):
        report = detect_ecl([5.1, 5.0, 3.0, 2.8, 2.7])
        assert report.ecl == 2
        assert report.drop == pytest.approx(2.0, abs=1e-12)
        np.testing.assert_allclose(report.drops, [0.1, 2.0, 0.2, 0.1],
                                   atol=1e-12)
        assert report.mode == "absolute"
        assert report.state == "query"

    def test_tie_breaks_to_smaller_layer(self):
        report = detect_ecl([4.0, 3.0, 3.0, 2.0])
        assert report.ecl == 1

    def test_min_drop_gate(self):
        with pytest.raises(NoCollapseError, match="below threshold"):
            detect_ecl([3.0, 2.9, 2.8], min_drop=0.5)

    def test_relative_mode(self):
        # drops 0.5/5.0 = 0.1 and 1.0/4.5 = 0.222..., relative picks layer 2
        report = detect_ecl([5.0, 4.5, 3.5], mode="relative")
        assert report.ecl == 2
        assert report.drop == pytest.approx(1.0 / 4.5, abs=1e-12)

    def test_relative_mode_zero_base_scores_zero(self):
        report = detect_ecl([0.0, 0.0, 2.0, 1.0], mode="relative")
        assert report.ecl == 3
        assert report.drops[0] == 0.0
        assert report.drops[1] == 0.0

    def test_rising_profile_with_gate_raises(self):
        with pytest.raises(NoCollapseError):
            detect_ecl([1.0, 2.0, 3.0], min_drop=1e-9)

    def test_accepts_entropy_profile_object(self, small_dump):
        profile = layerwise_profile(small_dump)
        report = detect_ecl(profile)
        assert report.state == "query"
        assert report.ecl == 3  # the fixture plants its collapse there

    @pytest.mark.parametrize("bad,err", [
        ([5.0], "at least 2"),
        ([1.0, np.nan], "non-finite"),
    ])
    def test_bad_profiles_rejected(self, bad, err):
        with pytest.raises(ValidationError, match=err):
            detect_ecl(bad)

    def test_bad_mode_rejected(self):
        with pytest.raises(ValidationError, match="mode"):
            detect_ecl([2.0, 1.0], mode="steepest")

    def test_negative_min_drop_rejected(self):
        with pytest.raises(ValidationError, match="min_drop"):
            detect_ecl([2.0, 1.0], min_drop=-0.1)


class TestLayerwiseProfile:
    def test_values_match_direct_entropy(self, small_dump):
        profile = layerwise_profile(small_dump, "query")
        for col in range(small_dump.layers):
            per_sample = [entropy_fast(s.query[col]) for s in small_dump.samples]
            np.testing.assert_allclose(profile.per_sample[:, col], per_sample,
                                       atol=1e-12)
            assert profile.values[col] == pytest.approx(
                np.mean(profile.per_sample[:, col]), abs=1e-15
            )

    def test_collapse_visible_in_profile(self, small_dump):
        values = layerwise_profile(small_dump).values
        # layers 1..3 ride the high-rank subspace, 4..6 the collapsed one
        assert min(values[:3]) > max(values[3:]) + 0.5

    def test_key_state_differs_from_query(self, small_dump):
        q = layerwise_profile(small_dump, "query").values
        k = layerwise_profile(small_dump, "key").values
        assert not np.array_equal(q, k)

    def test_median_aggregate(self, small_dump):
        profile = layerwise_profile(small_dump, aggregate="median")
        np.testing.assert_array_equal(
            profile.values, np.median(profile.per_sample, axis=0)
        )

    def test_topk_profile_bounded_by_full(self, small_dump):
        full = layerwise_profile(small_dump).values
        top = layerwise_profile(small_dump, topk=2).values
        assert np.all(top <= full + 1e-12)

    def test_threaded_profile_bitwise_equal(self, small_dump):
        serial = layerwise_profile(small_dump)
        threaded = layerwise_profile(small_dump, threads=3)
        assert serial.per_sample.tobytes() == threaded.per_sample.tobytes()

    def test_degenerate_layer_warns_and_scores_zero(self):
        dump = synth_collapse_dump(2, 6, 8, 2, 1, 4, 1, 0.0, 0)
        for layer_states in (dump.samples[0].query, dump.samples[0].key):
            layer_states[1] = np.ones((6, 8))
        with pytest.warns(UserWarning, match="identical"):
            profile = layerwise_profile(dump)
        assert profile.values[1] == 0.0

    def test_bad_state_rejected(self, small_dump):
        with pytest.raises(ValidationError, match="state"):
            layerwise_profile(small_dump, "value")

    def test_bad_aggregate_rejected(self, small_dump):
        with pytest.raises(ValidationError, match="aggregate"):
            layerwise_profile(small_dump, aggregate="max")

    def test_empty_dump_rejected(self, small_dump):
        small_dump.samples = []
        with pytest.raises(ValidationError, match="no samples"):
            layerwise_profile(small_dump)

    def test_single_token_sample_rejected(self, small_dump):
        sample = small_dump.samples[0]
        sample.query = [m[:1] for m in sample.query]
        sample.key = [m[:1] for m in sample.key]
        with pytest.raises(ValidationError, match="fewer than 2"):
            layerwise_profile(small_dump)


class TestSynthDump:
    def test_same_seed_is_bit_identical(self):
        a = synth_collapse_dump(4, 20, 16, 4, 2, 8, 2, 0.01, 42, samples=2)
        b = synth_collapse_dump(4, 20, 16, 4, 2, 8, 2, 0.01, 42, samples=2)
        for sa, sb in zip(a.samples, b.samples):
            for ma, mb in zip(sa.query + sa.key, sb.query + sb.key):
                assert ma.tobytes() == mb.tobytes()

    def test_shapes_and_counts(self):
        dump = synth_collapse_dump(3, 10, 12, 3, 1, 6, 2, 0.0, 5, samples=3)
        assert len(dump.samples) == 3
        for sample in dump.samples:
            assert len(sample.query) == 3 and len(sample.key) == 3
            assert all(m.shape == (10, 12) for m in sample.query)

    def test_planted_collapse_is_detected(self):
        for target in (1, 3, 6):
            dump = synth_collapse_dump(8, 40, 32, 4, target, 16, 2, 0.01,
                                       seed=100 + target)
            report = detect_ecl(layerwise_profile(dump))
            assert report.ecl == target

    @pytest.mark.parametrize("kwargs,err", [
        (dict(layers=1, collapse_layer=1), "at least 2 layers"),
        (dict(collapse_layer=6), "outside"),
        (dict(collapse_layer=0), "outside"),
        (dict(hidden=10), "divisible"),
        (dict(rank_hi=2, rank_lo=2), "rank_lo < rank_hi"),
        (dict(rank_hi=40), "exceeds"),
        (dict(noise=-0.1), "noise"),
        (dict(samples=0), "samples"),
    ])
    def test_validation(self, kwargs, err):
        base = dict(layers=6, tokens=30, hidden=16, heads=4,
                    collapse_layer=3, rank_hi=8, rank_lo=2, noise=0.01,
                    seed=0, samples=1)
        base.update(kwargs)
        with pytest.raises(ValidationError, match=err):
            synth_collapse_dump(**base)


class TestProfileCsv:
    def test_golden_layout(self):
        profile = EntropyProfile(
            state="query",
            layers=np.array([1, 2]),
            sample_ids=["a", "b"],
            per_sample=np.array([[1.5, 0.5], [2.5, 0.25]]),
            aggregate="mean",
            values=np.array([2.0, 0.375]),
        )
        expected = (
            "layer,state,mean_entropy,sample_id,entropy\n"
            "1,query,2.0,,\n"
            "1,query,2.0,a,1.5\n"
            "1,query,2.0,b,2.5\n"
            "2,query,0.375,,\n"
            "2,query,0.375,a,0.5\n"
            "2,query,0.375,b,0.25\n"
        )
        assert profile_csv_text(profile) == expected

    def test_file_writer_matches_text(self, small_dump, tmp_path):
        profile = layerwise_profile(small_dump)
        path = tmp_path / "profile.csv"
        write_profile_csv(profile, path)
        assert path.read_text(encoding="utf-8") == profile_csv_text(profile)

    def test_rerun_is_byte_identical(self, small_dump):
        a = profile_csv_text(layerwise_profile(small_dump))
        b = profile_csv_text(layerwise_profile(small_dump))
        assert a == b
