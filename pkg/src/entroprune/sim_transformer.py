"""Deterministic toy decoder for end-to-end pruning runs at desk scale.

Pre-norm decoder layers: RMSNorm, causal multi-head attention, RMSNorm,
gated (SwiGLU) FFN, residuals around both. Positions enter as learned
additive embeddings drawn with the rest of the weights; there is no rotary
mixing, so captured query/key states are the raw projections.

Every matrix multiply adds 2 * (product of its dimensions) to the layer's
multiply-accumulate tally; element-wise work (softmax, norms, activation)
is deliberately uncounted so the tally matches the analytic model's matmul
terms.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .ecl_detector import detect_ecl, layerwise_profile
from .errors import NumericError, ValidationError
from .tensor_io import ActivationDump, SampleStates, as_matrix
from .token_scorer import KeepMask, apply_mask, score_tokens, select_keep

RMSNORM_EPS = 1e-6


@dataclass
class SimConfig:
    layers: int
    heads: int
    hidden: int
    ffn: int
    tokens: int
    seed: int = 0

    def __post_init__(self):
        for name in ("layers", "heads", "hidden", "ffn", "tokens"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        if self.hidden % self.heads != 0:
            raise ValidationError(
                f"hidden {self.hidden} not divisible by heads {self.heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


@dataclass
class PrunePlan:
    layer: int
    budget: int
    state: str = "query"

    def __post_init__(self):
        if not isinstance(self.layer, int) or isinstance(self.layer, bool) or self.layer < 1:
            raise ValidationError(f"prune layer must be a positive integer, got {self.layer!r}")
        if not isinstance(self.budget, int) or isinstance(self.budget, bool) or self.budget < 1:
            raise ValidationError(f"budget must be a positive integer, got {self.budget!r}")
        if self.state not in ("query", "key"):
            raise ValidationError(f"state must be 'query' or 'key', got {self.state!r}")


@dataclass
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    wg: np.ndarray
    wu: np.ndarray
    wd: np.ndarray


@dataclass
class SimModel:
    cfg: SimConfig
    pos: np.ndarray
    layers: list[LayerWeights]


@dataclass
class SimTrace:
    cfg: SimConfig
    captured_query: list[np.ndarray]
    captured_key: list[np.ndarray]
    final_hidden: np.ndarray
    keep_mask: KeepMask | None
    layer_macs: list[int]
    layer_tokens: list[int]
    ecl_detected: int | None = None

    @property
    def total_macs(self) -> int:
        return sum(self.layer_macs)


@dataclass
class CalibrationSample:
    """Input for an unpruned calibration pass; inject overrides the captured
    query states per layer (the attention math still uses the computed ones)."""

    embeddings: np.ndarray
    inject: dict[int, np.ndarray] | None = None


def sim_init(cfg: SimConfig) -> SimModel:
    """Build a model with all weights ~ Normal(0, 1/sqrt(hidden)), seeded."""
    rng = np.random.default_rng(cfg.seed)
    scale = cfg.hidden ** -0.5
    d, m = cfg.hidden, cfg.ffn
    pos = scale * rng.standard_normal((cfg.tokens, d))
    layers = [
        LayerWeights(
            wq=scale * rng.standard_normal((d, d)),
            wk=scale * rng.standard_normal((d, d)),
            wv=scale * rng.standard_normal((d, d)),
            wo=scale * rng.standard_normal((d, d)),
            wg=scale * rng.standard_normal((d, m)),
            wu=scale * rng.standard_normal((d, m)),
            wd=scale * rng.standard_normal((m, d)),
        )
        for _ in range(cfg.layers)
    ]
    return SimModel(cfg=cfg, pos=pos, layers=layers)


def _rmsnorm(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt((x * x).mean(axis=-1, keepdims=True) + RMSNORM_EPS)


def _swish(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def _causal_attention(q, k, v, heads):
    n, d = q.shape
    dh = d // heads
    qh = q.reshape(n, heads, dh).transpose(1, 0, 2)
    kh = k.reshape(n, heads, dh).transpose(1, 0, 2)
    vh = v.reshape(n, heads, dh).transpose(1, 0, 2)
    scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(dh)
    mask = np.triu(np.ones((n, n), dtype=bool), k=1)
    scores[:, mask] = -np.inf
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    ctx = weights @ vh
    return ctx.transpose(1, 0, 2).reshape(n, d)


def sim_forward(model: SimModel, embeddings, prune: PrunePlan | None = None,
                inject: dict[int, np.ndarray] | None = None) -> SimTrace:
    """Run all layers with per-layer query/key capture and MAC counting.

    With a prune plan, layer `plan.layer` runs fully on all tokens, its
    (injected or computed) states of the chosen kind are scored, and later
    layers see only the kept rows in original order. Injected matrices
    replace the captured and scored query states only.
    """
    cfg = model.cfg
    x = as_matrix(embeddings, "embeddings")
    if x.shape[1] != cfg.hidden:
        raise ValidationError(f"embeddings have {x.shape[1]} columns, model hidden is {cfg.hidden}")
    if x.shape[0] > cfg.tokens:
        raise ValidationError(
            f"{x.shape[0]} tokens exceed the model's position table ({cfg.tokens})"
        )
    if prune is not None and prune.layer > cfg.layers:
        raise ValidationError(f"prune layer {prune.layer} exceeds depth {cfg.layers}")
    inject = inject or {}
    for layer_idx in inject:
        if not 1 <= layer_idx <= cfg.layers:
            raise ValidationError(f"inject layer {layer_idx} outside 1..{cfg.layers}")

    d, m, h = cfg.hidden, cfg.ffn, cfg.heads
    x = x + model.pos[: x.shape[0]]
    captured_q: list[np.ndarray] = []
    captured_k: list[np.ndarray] = []
    layer_macs: list[int] = []
    layer_tokens: list[int] = []
    keep_mask: KeepMask | None = None

    for layer_no, w in enumerate(model.layers, start=1):
        n = x.shape[0]
        macs = 0
        xn = _rmsnorm(x)
        q = xn @ w.wq
        k = xn @ w.wk
        v = xn @ w.wv
        macs += 3 * 2 * n * d * d
        q_vis = q
        if layer_no in inject:
            override = as_matrix(inject[layer_no], f"inject[{layer_no}]")
            if override.shape != q.shape:
                raise ValidationError(
                    f"inject[{layer_no}] shape {override.shape} != query shape {q.shape}"
                )
            q_vis = override
        captured_q.append(q_vis.copy())
        captured_k.append(k.copy())

        x = x + _causal_attention(q, k, v, h) @ w.wo
        macs += 2 * 2 * n * n * (d // h) * h  # scores and values, all heads
        macs += 2 * n * d * d

        xn2 = _rmsnorm(x)
        gate = xn2 @ w.wg
        up = xn2 @ w.wu
        x = x + (_swish(gate) * up) @ w.wd
        macs += 3 * 2 * n * m * d

        if not np.isfinite(x).all():
            raise NumericError(f"non-finite hidden state after layer {layer_no}")
        layer_macs.append(macs)
        layer_tokens.append(n)

        if prune is not None and prune.layer == layer_no:
            source = q_vis if prune.state == "query" else captured_k[-1]
            scores = score_tokens(source, h)
            keep_mask = select_keep(scores, prune.budget)
            x = apply_mask(x, keep_mask)

    return SimTrace(
        cfg=cfg,
        captured_query=captured_q,
        captured_key=captured_k,
        final_hidden=x,
        keep_mask=keep_mask,
        layer_macs=layer_macs,
        layer_tokens=layer_tokens,
    )


def capture_to_dump(model: SimModel, traces: list[SimTrace],
                    ids: list[str] | None = None) -> ActivationDump:
    """Assemble unpruned traces' captured states into an ActivationDump."""
    cfg = model.cfg
    dump = ActivationDump(layers=cfg.layers, heads=cfg.heads, hidden=cfg.hidden)
    for pos, trace in enumerate(traces):
        sid = ids[pos] if ids else f"s{pos}"
        dump.samples.append(SampleStates(
            sample_id=sid, query=trace.captured_query, key=trace.captured_key,
        ))
    return dump


def calibration_from_dump(model: SimModel, dump: ActivationDump) -> list[CalibrationSample]:
    """Turn a dump into calibration samples that inject its query states.

    Embeddings are zeros (any finite input works; the injected states are
    what the profile sees), so detection reproduces the dump's profile.
    """
    cfg = model.cfg
    if dump.layers != cfg.layers or dump.hidden != cfg.hidden:
        raise ValidationError(
            f"dump geometry ({dump.layers} layers, hidden {dump.hidden}) does not "
            f"match model ({cfg.layers} layers, hidden {cfg.hidden})"
        )
    out = []
    for sample in dump.samples:
        n = sample.query[0].shape[0]
        if n > cfg.tokens:
            raise ValidationError(
                f"sample {sample.sample_id!r} has {n} tokens, model supports {cfg.tokens}"
            )
        inject = {idx: sample.query[idx - 1] for idx in range(1, dump.layers + 1)}
        out.append(CalibrationSample(embeddings=np.zeros((n, cfg.hidden)), inject=inject))
    return out


def sim_run_pipeline(model: SimModel, embeddings, budget: int,
                     calibration_samples: list[CalibrationSample] | None = None,
                     *, prune_layer: int | str = "auto", state: str = "query",
                     min_drop: float = 0.0) -> SimTrace:
    """Full pipeline: profile calibration runs, detect the collapse layer,
    then forward with pruning at that layer.

    prune_layer "auto" requires calibration samples; an integer skips
    detection and prunes there directly.
    """
    detected = None
    if prune_layer == "auto":
        if not calibration_samples:
            raise ValidationError("prune_layer='auto' needs calibration samples")
        if model.cfg.layers < 2:
            raise ValidationError("auto detection needs at least 2 layers")
        traces = [
            sim_forward(model, cs.embeddings, inject=cs.inject)
            for cs in calibration_samples
        ]
        dump = capture_to_dump(model, traces)
        profile = layerwise_profile(dump, state)
        detected = detect_ecl(profile, min_drop=min_drop).ecl
        layer = detected
    else:
        if not isinstance(prune_layer, int) or isinstance(prune_layer, bool):
            raise ValidationError(f"prune_layer must be 'auto' or an integer, got {prune_layer!r}")
        layer = prune_layer
    trace = sim_forward(model, embeddings, prune=PrunePlan(layer=layer, budget=budget, state=state))
    trace.ecl_detected = detected
    return trace


def trace_to_json(trace: SimTrace) -> dict:
    """JSON-ready view: shapes, mask, MAC tallies, and a payload checksum."""
    return {
        "config": {
            "layers": trace.cfg.layers, "heads": trace.cfg.heads,
            "hidden": trace.cfg.hidden, "ffn": trace.cfg.ffn,
            "tokens": trace.cfg.tokens, "seed": trace.cfg.seed,
        },
        "ecl_detected": trace.ecl_detected,
        "keep_mask": None if trace.keep_mask is None else {
            "kept": trace.keep_mask.kept.tolist(),
            "n_tokens": trace.keep_mask.n_tokens,
            "budget": trace.keep_mask.budget,
        },
        "layer_tokens": trace.layer_tokens,
        "layer_macs": trace.layer_macs,
        "total_macs": trace.total_macs,
        "final_hidden_shape": list(trace.final_hidden.shape),
        "final_hidden_sha256": hashlib.sha256(
            np.ascontiguousarray(trace.final_hidden).tobytes()
        ).hexdigest(),
        "captured_shapes": {
            "query": [list(qm.shape) for qm in trace.captured_query],
            "key": [list(km.shape) for km in trace.captured_key],
        },
    }
