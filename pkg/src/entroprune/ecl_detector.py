"""Layer-wise entropy profiles and entropy-collapse-layer detection.

The profile is the per-layer matrix entropy of the full token matrix
(averaged across samples); the collapse layer is the layer whose step to
the next layer loses the most entropy. Pruning convention: prune at layer
l* means layer l* still sees all tokens and layers l*+1..L see the kept
subset, matching the FLOPs model's k.
"""

from __future__ import annotations

import csv
import io
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, NoCollapseError, ValidationError
from .matrix_entropy import topk_entropy, von_neumann_entropy
from .spectral_fastpath import spectrum_fast
from .tensor_io import ActivationDump, SampleStates

STATE_KINDS = ("query", "key")
AGGREGATES = ("mean", "median")


@dataclass
class EntropyProfile:
    state: str
    layers: np.ndarray
    sample_ids: list[str]
    per_sample: np.ndarray  # shape (samples, layers)
    aggregate: str
    values: np.ndarray  # aggregated, length L


@dataclass
class EclReport:
    ecl: int
    drop: float
    drops: np.ndarray  # first differences, index i -> boundary (i+1, i+2)
    min_drop: float
    mode: str
    state: str


def _sample_layer_entropy(matrix, topk, label) -> float:
    try:
        spectrum = spectrum_fast(matrix)
    except DegenerateInputError:
        warnings.warn(f"{label}: all tokens identical, entropy set to 0")
        return 0.0
    if topk is not None:
        return topk_entropy(spectrum, topk)
    return von_neumann_entropy(spectrum)


def layerwise_profile(dump: ActivationDump, state: str = "query", *,
                      topk: int | None = None, aggregate: str = "mean",
                      threads: int | None = None) -> EntropyProfile:
    """Per-layer entropy of each sample's token matrix, aggregated across samples.

    Entropy of a layer is the von Neumann entropy (or top-k entropy when
    ``topk`` is set) of the trace-normalized covariance of the N x d token
    matrix, computed on the small-side Gram. A layer whose tokens are all
    identical scores 0 with a warning.
    """
    if state not in STATE_KINDS:
        raise ValidationError(f"state must be one of {STATE_KINDS}, got {state!r}")
    if aggregate not in AGGREGATES:
        raise ValidationError(f"aggregate must be one of {AGGREGATES}, got {aggregate!r}")
    if not dump.samples:
        raise ValidationError("dump contains no samples")
    for sample in dump.samples:
        if getattr(sample, state)[0].shape[0] < 2:
            raise ValidationError(f"sample {sample.sample_id!r} has fewer than 2 tokens")

    tasks = [
        (getattr(sample, state)[layer - 1], topk,
         f"sample {sample.sample_id!r} layer {layer} {state}")
        for sample in dump.samples
        for layer in range(1, dump.layers + 1)
    ]
    workers = 1 if threads is None else int(threads)
    if workers < 1:
        raise ValidationError(f"threads must be >= 1, got {threads!r}")
    if workers == 1:
        flat = [_sample_layer_entropy(*task) for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            flat = list(pool.map(lambda task: _sample_layer_entropy(*task), tasks))
    per_sample = np.array(flat, dtype=np.float64).reshape(len(dump.samples), dump.layers)
    values = np.mean(per_sample, axis=0) if aggregate == "mean" else np.median(per_sample, axis=0)
    return EntropyProfile(
        state=state,
        layers=np.arange(1, dump.layers + 1),
        sample_ids=[s.sample_id for s in dump.samples],
        per_sample=per_sample,
        aggregate=aggregate,
        values=values,
    )


def detect_ecl(profile, *, min_drop: float = 0.0, mode: str = "absolute") -> EclReport:
    """Collapse layer: argmax over l in [1, L-1] of the entropy drop to l+1.

    Drops are S(l) - S(l+1) in "absolute" mode or (S(l) - S(l+1)) / S(l)
    in "relative" mode (0 where S(l) is 0). Ties break to the smaller l.
    If the best drop falls below min_drop, no collapse exists.
    """
    if isinstance(profile, EntropyProfile):
        values = profile.values
        state = profile.state
    else:
        values = np.asarray(profile, dtype=np.float64).ravel()
        state = "query"
    if values.size < 2:
        raise ValidationError(f"profile needs at least 2 layers, got {values.size}")
    if not np.isfinite(values).all():
        raise ValidationError("profile contains non-finite entropies")
    if mode not in ("absolute", "relative"):
        raise ValidationError(f"mode must be 'absolute' or 'relative', got {mode!r}")
    if min_drop < 0:
        raise ValidationError(f"min_drop must be >= 0, got {min_drop!r}")

    steps = values[:-1] - values[1:]
    if mode == "relative":
        base = values[:-1]
        steps = np.where(base > 0, steps / np.where(base > 0, base, 1.0), 0.0)
    best = int(np.argmax(steps))  # first maximum: smallest layer wins ties
    if steps[best] < min_drop:
        raise NoCollapseError(
            f"largest {mode} drop {steps[best]:.6g} below threshold {min_drop:.6g}"
        )
    return EclReport(
        ecl=best + 1,
        drop=float(steps[best]),
        drops=steps,
        min_drop=float(min_drop),
        mode=mode,
        state=state,
    )


def synth_collapse_dump(layers: int, tokens: int, hidden: int, heads: int,
                        collapse_layer: int, rank_hi: int, rank_lo: int,
                        noise: float, seed: int, *, samples: int = 1) -> ActivationDump:
    """Synthetic dump with a known entropy collapse for detector verification.

    Layers up to collapse_layer draw tokens isotropically from a rank_hi
    dimensional subspace, later layers from a rank_lo one, both plus
    Gaussian noise of the given scale. Fixed seed gives a bit-identical
    dump. Separate subspaces are drawn per layer and state, so the only
    structure shared across layers is the rank schedule.
    """
    if layers < 2:
        raise ValidationError(f"need at least 2 layers, got {layers}")
    if not 1 <= collapse_layer <= layers - 1:
        raise ValidationError(
            f"collapse_layer {collapse_layer} outside 1..{layers - 1}"
        )
    if hidden % heads != 0:
        raise ValidationError(f"hidden {hidden} not divisible by heads {heads}")
    if not 1 <= rank_lo < rank_hi:
        raise ValidationError(f"need 1 <= rank_lo < rank_hi, got {rank_lo}, {rank_hi}")
    if rank_hi > min(tokens - 1, hidden):
        raise ValidationError(
            f"rank_hi {rank_hi} exceeds min(tokens-1, hidden) = {min(tokens - 1, hidden)}"
        )
    if noise < 0:
        raise ValidationError(f"noise must be >= 0, got {noise!r}")
    if samples < 1:
        raise ValidationError(f"samples must be >= 1, got {samples!r}")

    rng = np.random.default_rng(seed)
    out = ActivationDump(layers=layers, heads=heads, hidden=hidden)
    for s in range(samples):
        sample = SampleStates(sample_id=f"s{s}")
        for layer in range(1, layers + 1):
            rank = rank_hi if layer <= collapse_layer else rank_lo
            for state in STATE_KINDS:
                basis, _ = np.linalg.qr(rng.standard_normal((hidden, rank)))
                coeff = rng.standard_normal((tokens, rank))
                x = coeff @ basis.T
                if noise > 0:
                    x += noise * rng.standard_normal((tokens, hidden))
                getattr(sample, state).append(x)
        out.samples.append(sample)
    return out


def profile_csv_text(profile: EntropyProfile) -> str:
    """CSV with columns layer,state,mean_entropy,sample_id,entropy.

    Each layer gets one aggregate row (empty sample columns) followed by
    one row per sample carrying the aggregate value alongside the
    per-sample entropy.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer", "state", "mean_entropy", "sample_id", "entropy"])
    for col, layer in enumerate(profile.layers):
        agg = repr(float(profile.values[col]))
        writer.writerow([int(layer), profile.state, agg, "", ""])
        for row, sid in enumerate(profile.sample_ids):
            writer.writerow([
                int(layer), profile.state, agg, sid,
                repr(float(profile.per_sample[row, col])),
            ])
    return buf.getvalue()


def write_profile_csv(profile: EntropyProfile, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(profile_csv_text(profile))
