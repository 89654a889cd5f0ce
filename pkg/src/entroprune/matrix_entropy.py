"""Matrix entropy core.

A token matrix becomes a density matrix (symmetric, PSD, unit trace) by
centering the tokens, normalizing each centered token to unit length, and
averaging the outer products. The entropy family (order-alpha, von Neumann,
top-k) is then a function of the density matrix's eigenvalue spectrum.

All entropies use the natural log and are reported in nats, with the
convention 0 * ln 0 = 0.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, NumericError, ValidationError
from .tensor_io import as_matrix

# Centered tokens with L2 norm below this are treated as zero directions.
DEGENERATE_TOL = 1e-12
SYMMETRY_TOL = 1e-10
EIG_CLAMP_TOL = 1e-10
TRACE_TOL = 1e-8


def trace_normalized_covariance(tokens) -> np.ndarray:
    """Density matrix of a token set: mean of unit-normalized centered outer products.

    Parameters
    ----------
    tokens : array-like, shape (N, d), N >= 2

    Returns
    -------
    ndarray, shape (d, d)
        Symmetric PSD matrix with trace 1. Tokens whose centered norm is
        below ``DEGENERATE_TOL`` contribute nothing and are excluded from
        the divisor, so the trace stays 1.

    Raises
    ------
    DegenerateInputError
        If every token equals the mean (no contributing token).
    """
    x = as_matrix(tokens, "tokens")
    if x.shape[0] < 2:
        raise ValidationError(f"need at least 2 tokens, got {x.shape[0]}")
    centered = x - x.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->i", centered, centered))
    live = norms >= DEGENERATE_TOL
    n_live = int(np.count_nonzero(live))
    if n_live == 0:
        raise DegenerateInputError("all tokens identical; covariance undefined")
    unit = centered[live] / norms[live, None]
    cov = unit.T @ unit / n_live
    return (cov + cov.T) / 2.0


def check_density(matrix, *, sym_tol: float = SYMMETRY_TOL,
                  trace_tol: float = TRACE_TOL) -> None:
    """Validate density matrix invariants; raises ValidationError on violation."""
    a = as_matrix(matrix, "density matrix")
    if a.shape[0] != a.shape[1]:
        raise ValidationError(f"density matrix must be square, got {a.shape}")
    asym = float(np.abs(a - a.T).max())
    if asym > sym_tol:
        raise ValidationError(f"matrix asymmetry {asym:.3e} exceeds {sym_tol:.1e}")
    trace = float(np.trace(a))
    if abs(trace - 1.0) > trace_tol:
        raise ValidationError(f"trace {trace!r} not within {trace_tol:.1e} of 1")
    w = np.linalg.eigvalsh(a)
    if w.min() < -EIG_CLAMP_TOL:
        raise ValidationError(f"matrix not PSD: min eigenvalue {w.min():.3e}")


def _psd_spectrum(matrix: np.ndarray) -> np.ndarray:
    """Descending clamped spectrum of an internally built symmetric matrix.

    Skips the boundary validation of eigenvalues_sym; callers guarantee a
    finite symmetric input by construction.
    """
    try:
        w = np.linalg.eigvalsh(matrix)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    smallest = float(w[0])
    if smallest < -EIG_CLAMP_TOL:
        raise NumericError(
            f"matrix not PSD within tolerance: min eigenvalue {smallest:.3e}"
        )
    if smallest < 0.0:
        w = np.clip(w, 0.0, None)
    return w[::-1]


def eigenvalues_sym(matrix, *, sym_tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Descending eigenvalues of a symmetric PSD-intent matrix.

    Negative eigenvalues within ``EIG_CLAMP_TOL`` of zero are rounding
    artifacts and are clamped to 0; anything more negative is an error.
    """
    a = as_matrix(matrix, "matrix")
    if a.shape[0] != a.shape[1]:
        raise ValidationError(f"matrix must be square, got {a.shape}")
    asym = float(np.abs(a - a.T).max())
    if asym > sym_tol:
        raise ValidationError(f"matrix asymmetry {asym:.3e} exceeds {sym_tol:.1e}")
    return _psd_spectrum(a)


def normalize_spectrum(spectrum, *, tol: float = TRACE_TOL) -> np.ndarray:
    """Check a spectrum sums to 1 within tol, then rescale to sum exactly 1."""
    s = np.asarray(spectrum, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValidationError("empty spectrum")
    if not np.isfinite(s).all():
        raise ValidationError("spectrum contains non-finite values")
    if s.min() < 0:
        raise ValidationError(f"spectrum has negative entry {s.min()!r}")
    total = float(s.sum())
    if abs(total - 1.0) > tol:
        raise ValidationError(f"spectrum sums to {total!r}, expected 1 within {tol:.1e}")
    return s / total


def von_neumann_entropy(spectrum) -> float:
    """-sum sigma ln sigma over the spectrum, in nats."""
    s = normalize_spectrum(spectrum)
    nz = s[s > 0]
    return float(-(nz * np.log(nz)).sum())


def renyi_entropy(spectrum, alpha: float) -> float:
    """Order-alpha entropy ln(sum sigma^alpha) / (1 - alpha).

    alpha must be positive and distinct from 1; use von_neumann_entropy for
    the alpha -> 1 limit.
    """
    alpha = float(alpha)
    if not np.isfinite(alpha) or alpha <= 0:
        raise ValidationError(f"alpha must be > 0, got {alpha!r}")
    if alpha == 1.0:
        raise ValidationError("alpha == 1 is the von Neumann limit; call von_neumann_entropy")
    s = normalize_spectrum(spectrum)
    powsum = float((s[s > 0] ** alpha).sum())
    return float(np.log(powsum) / (1.0 - alpha))


def topk_entropy(spectrum, k: int | None = None) -> float:
    """Entropy contribution of the k largest eigenvalues (no renormalization).

    k = None or k >= len(spectrum) uses the full spectrum, which equals the
    von Neumann entropy.
    """
    s = normalize_spectrum(spectrum)
    if k is None:
        k = s.size
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool) or k < 1:
        raise ValidationError(f"k must be a positive integer, got {k!r}")
    k = min(int(k), s.size)
    top = np.sort(s)[::-1][:k]
    nz = top[top > 0]
    return float(-(nz * np.log(nz)).sum())
