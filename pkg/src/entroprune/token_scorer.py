"""Per-token entropy scoring and budgeted selection.

Each token vector (length d) is reshaped into its h head slices (h x d_h),
scored by the matrix entropy of that head matrix, and the highest-scoring
tokens are kept up to a budget. Scores live in [0, ln h]; higher means the
token's head features spread over more independent directions.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation

import numpy as np

from .errors import ValidationError
from .spectral_fastpath import entropy_fast
from .tensor_io import as_matrix


@dataclass
class KeepMask:
    """Sorted retained token indices for a given budget."""

    kept: np.ndarray
    n_tokens: int
    budget: int

    def __post_init__(self):
        self.kept = np.asarray(self.kept, dtype=np.int64)


def headwise_reshape(token, heads: int) -> np.ndarray:
    """Split a length-d vector into h contiguous rows of length d/h."""
    vec = np.ascontiguousarray(token, dtype=np.float64).ravel()
    if not isinstance(heads, (int, np.integer)) or isinstance(heads, bool) or heads < 1:
        raise ValidationError(f"heads must be a positive integer, got {heads!r}")
    if vec.size == 0 or vec.size % heads != 0:
        raise ValidationError(f"token length {vec.size} not divisible by heads {heads}")
    if not np.isfinite(vec).all():
        raise ValidationError("token contains non-finite values")
    return vec.reshape(int(heads), vec.size // int(heads))


def token_entropy(token, heads: int) -> float:
    """Matrix entropy of the token's head matrix; degenerate tokens score 0.

    The score is invariant under scaling the token by any nonzero constant
    (centering and row normalization absorb it), up to the fixed 1e-12
    degeneracy cutoff which extreme scales can cross.
    """
    if heads < 2:
        raise ValidationError(f"scoring needs at least 2 heads, got {heads}")
    return entropy_fast(headwise_reshape(token, heads))


def score_tokens(states, heads: int, *, threads: int | None = None) -> np.ndarray:
    """Score every row of an N x d state matrix; one entropy per token.

    Tokens are independent, so any thread count yields bitwise-identical
    scores in row order.
    """
    x = as_matrix(states, "states")
    workers = 1 if threads is None else int(threads)
    if workers < 1:
        raise ValidationError(f"threads must be >= 1, got {threads!r}")
    if workers == 1:
        return np.array([token_entropy(row, heads) for row in x], dtype=np.float64)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        scores = list(pool.map(lambda row: token_entropy(row, heads), x))
    return np.array(scores, dtype=np.float64)


def parse_budget(text, n_tokens: int) -> int:
    """Resolve a budget given as a count ("192") or percentage ("33.3%").

    Percentages are taken of n_tokens and rounded half up. The result must
    be at least 1; values above n_tokens are legal and keep everything.
    """
    if isinstance(text, (int, np.integer)) and not isinstance(text, bool):
        budget = int(text)
    else:
        raw = str(text).strip()
        try:
            if raw.endswith("%"):
                pct = Decimal(raw[:-1].strip())
                budget = int(
                    (pct * n_tokens / Decimal(100)).quantize(Decimal(1), rounding=ROUND_HALF_UP)
                )
            else:
                budget = int(raw)
        except (InvalidOperation, ValueError) as exc:
            raise ValidationError(f"cannot parse budget {text!r}") from exc
    if budget < 1:
        raise ValidationError(f"budget must keep at least 1 token, got {budget}")
    return budget


def select_keep(scores, budget: int) -> KeepMask:
    """Indices of the `budget` highest scores, ties to the smaller index.

    The kept list is sorted ascending so downstream consumers preserve the
    original token order. budget >= N keeps all tokens.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValidationError("cannot select from empty scores")
    if not np.isfinite(s).all():
        raise ValidationError("scores contain non-finite values")
    if not isinstance(budget, (int, np.integer)) or isinstance(budget, bool) or budget < 1:
        raise ValidationError(f"budget must be a positive integer, got {budget!r}")
    take = min(int(budget), s.size)
    order = np.argsort(-s, kind="stable")
    kept = np.sort(order[:take])
    return KeepMask(kept=kept, n_tokens=s.size, budget=take)


def apply_mask(states, mask: KeepMask) -> np.ndarray:
    """Gather kept rows in ascending index order, values bit-identical."""
    x = as_matrix(states, "states")
    if x.shape[0] != mask.n_tokens:
        raise ValidationError(
            f"mask built for {mask.n_tokens} tokens, states have {x.shape[0]}"
        )
    return x[mask.kept]
