"""Wall-clock comparison of the naive and small-side entropy routes."""

from __future__ import annotations

import statistics
import time

import numpy as np

from .errors import NumericError, ValidationError
from .spectral_fastpath import entropy_fast, entropy_naive, speedup_theoretical

EQUIVALENCE_TOL = 1e-9


def run_bench(head_dim: int, heads: int, tokens: int = 500, iters: int = 3,
              seed: int = 0) -> dict:
    """Time entropy_naive vs entropy_fast over random head matrices.

    Both paths are first asserted equal within 1e-9 on every matrix; the
    report then carries the median per-token wall-clock of each path, the
    measured speedup, and the theoretical (head_dim / heads)^3 ratio.
    """
    theoretical = speedup_theoretical(head_dim, heads)  # validates geometry
    if heads < 2:
        raise ValidationError(f"need at least 2 heads, got {heads}")
    if tokens < 1 or iters < 1:
        raise ValidationError("tokens and iters must be >= 1")

    rng = np.random.default_rng(seed)
    mats = [rng.standard_normal((heads, head_dim)) for _ in range(tokens)]

    worst = 0.0
    for m in mats:
        worst = max(worst, abs(entropy_fast(m) - entropy_naive(m)))
    if worst > EQUIVALENCE_TOL:
        raise NumericError(
            f"fast/naive disagreement {worst:.3e} exceeds {EQUIVALENCE_TOL:.1e}"
        )

    for m in mats[: min(16, tokens)]:  # warm caches and allocator
        entropy_naive(m)
        entropy_fast(m)

    # Each route is timed per call in its own contiguous block, the way the
    # scorer actually runs it over a token set; alternating the block order
    # across iterations spreads slow drift (thermal, scheduler) over both.
    naive_ns: list[int] = []
    fast_ns: list[int] = []
    for it in range(iters):
        order = ((entropy_naive, naive_ns), (entropy_fast, fast_ns))
        if it % 2 == 1:
            order = order[::-1]
        for fn, sink in order:
            for m in mats:
                t0 = time.perf_counter_ns()
                fn(m)
                sink.append(time.perf_counter_ns() - t0)

    median_naive = statistics.median(naive_ns) / 1e9
    median_fast = statistics.median(fast_ns) / 1e9
    return {
        "head_dim": head_dim,
        "heads": heads,
        "tokens": tokens,
        "iters": iters,
        "seed": seed,
        "max_abs_difference": worst,
        "median_naive_s": median_naive,
        "median_fast_s": median_fast,
        "measured_speedup": median_naive / median_fast,
        "theoretical_speedup": theoretical,
    }
