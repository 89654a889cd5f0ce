import math

import numpy as np
import pytest

from entroprune.errors import ValidationError
from entroprune.token_scorer import (
    KeepMask,
    apply_mask,
    headwise_reshape,
    parse_budget,
    score_tokens,
    select_keep,
    token_entropy,
)


class TestHeadwiseReshape:
    def test_contiguous_split(self):
        token = np.arange(8.0)
        heads = headwise_reshape(token, 4)
        np.testing.assert_array_equal(heads, np.arange(8.0).reshape(4, 2))

    def test_matrix_row_accepted(self):
        row = np.arange(6.0).reshape(1, 6)
        assert headwise_reshape(row, 3).shape == (3, 2)

    def test_indivisible_length_rejected(self):
        with pytest.raises(ValidationError, match="divisible"):
            headwise_reshape(np.arange(7.0), 3)

    @pytest.mark.parametrize("bad", [0, -1, 2.5, True])
    def test_bad_head_count_rejected(self, bad):
        with pytest.raises(ValidationError):
            headwise_reshape(np.arange(8.0), bad)

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError, match="non-finite"):
            headwise_reshape(np.array([1.0, np.nan, 0.0, 2.0]), 2)


class TestTokenEntropy:
    def test_identity_block_token_scores_ln_h_minus_1(self):
        # token whose head matrix is the identity: spectrum is uniform over
        # h-1 directions after centering, entropy exactly ln(h-1)
        for h in (4, 8):
            token = np.eye(h).ravel()
            assert token_entropy(token, h) == pytest.approx(
                math.log(h - 1), abs=1e-10
            )

    def test_constant_head_token_scores_zero(self):
        # every head sees the same vector, so the head matrix has rank 0
        # after centering
        token = np.tile([1.0, 2.0, 3.0], 4)
        assert token_entropy(token, 4) == 0.0

    def test_scale_invariance(self, rng):
        token = rng.standard_normal(32)
        base = token_entropy(token, 4)
        for c in (1e-3, 7.0, 1e3):
            assert token_entropy(token * c, 4) == pytest.approx(base, abs=1e-9)

    def test_single_head_rejected(self):
        with pytest.raises(ValidationError, match="heads"):
            token_entropy(np.arange(8.0), 1)


class TestScoreTokens:
    def test_matches_per_token_calls(self, rng):
        states = rng.standard_normal((10, 24))
        scores = score_tokens(states, 4)
        for i, row in enumerate(states):
            assert scores[i] == token_entropy(row, 4)

    def test_threaded_is_bitwise_identical(self, rng):
        states = rng.standard_normal((32, 64))
        serial = score_tokens(states, 8)
        threaded = score_tokens(states, 8, threads=4)
        assert serial.tobytes() == threaded.tobytes()

    def test_zero_threads_rejected(self, rng):
        with pytest.raises(ValidationError, match="threads"):
            score_tokens(rng.standard_normal((4, 8)), 2, threads=0)

    def test_non_finite_states_rejected(self):
        states = np.ones((3, 8))
        states[2, 1] = np.inf
        with pytest.raises(ValidationError):
            score_tokens(states, 2)


class TestParseBudget:
    def test_plain_count(self):
        assert parse_budget("192", 576) == 192

    def test_int_passthrough(self):
        assert parse_budget(144, 576) == 144

    def test_percent_rounds_half_up(self):
        assert parse_budget("33.3%", 576) == 192  # 191.808 rounds to 192
        assert parse_budget("25%", 576) == 144
        assert parse_budget("0.5%", 300) == 2  # 1.5 rounds up, not to even

    def test_whitespace_tolerated(self):
        assert parse_budget("  50 %  ", 100) == 50

    def test_over_budget_passes_through(self):
        assert parse_budget("1000", 576) == 1000

    @pytest.mark.parametrize("bad", ["abc", "12.5", "%", "", "abc%"])
    def test_garbage_rejected(self, bad):
        with pytest.raises(ValidationError, match="parse"):
            parse_budget(bad, 100)

    @pytest.mark.parametrize("bad", ["0", "-3", 0, "0.01%"])
    def test_sub_one_rejected(self, bad):
        with pytest.raises(ValidationError, match="at least 1"):
            parse_budget(bad, 100)


class TestSelectKeep:
    def test_top_scores_kept_in_index_order(self):
        mask = select_keep([0.1, 0.9, 0.5, 0.8], 2)
        assert mask.kept.tolist() == [1, 3]
        assert mask.n_tokens == 4
        assert mask.budget == 2

    def test_ties_go_to_smaller_index(self):
        mask = select_keep([1.0, 1.0, 1.0, 0.0], 2)
        assert mask.kept.tolist() == [0, 1]

    def test_all_tied_keeps_prefix(self):
        mask = select_keep(np.zeros(6), 3)
        assert mask.kept.tolist() == [0, 1, 2]

    def test_budget_above_n_clamps(self):
        mask = select_keep([0.3, 0.1], 10)
        assert mask.kept.tolist() == [0, 1]
        assert mask.budget == 2

    def test_kept_dtype_is_int64(self):
        assert select_keep([1.0, 2.0], 1).kept.dtype == np.int64

    @pytest.mark.parametrize("bad", [0, -2, 1.5, True])
    def test_bad_budget_rejected(self, bad):
        with pytest.raises(ValidationError, match="budget"):
            select_keep([1.0, 2.0], bad)

    def test_empty_scores_rejected(self):
        with pytest.raises(ValidationError, match="empty"):
            select_keep([], 1)

    def test_nan_scores_rejected(self):
        with pytest.raises(ValidationError, match="non-finite"):
            select_keep([1.0, np.nan], 1)


class TestApplyMask:
    def test_rows_gathered_bit_identical(self, rng):
        states = rng.standard_normal((8, 5))
        mask = select_keep(rng.standard_normal(8), 3)
        pruned = apply_mask(states, mask)
        assert pruned.tobytes() == states[mask.kept].tobytes()
        assert pruned.shape == (3, 5)

    def test_token_count_mismatch_rejected(self, rng):
        mask = KeepMask(kept=[0, 1], n_tokens=4, budget=2)
        with pytest.raises(ValidationError, match="mask built for 4"):
            apply_mask(rng.standard_normal((5, 3)), mask)


def test_pipeline_keeps_structured_tokens_over_noise(rng):
    # structured tokens (distinct head directions) outrank near-constant ones
    d, h = 32, 4
    rich = [np.eye(h, d // h).ravel() + 0.01 * rng.standard_normal(d)
            for _ in range(3)]
    flat = [np.tile(rng.standard_normal(d // h), h) for _ in range(5)]
    states = np.vstack(flat[:2] + rich + flat[2:])
    scores = score_tokens(states, h)
    mask = select_keep(scores, 3)
    assert mask.kept.tolist() == [2, 3, 4]
