"""Analytic FLOPs model for visual-token pruning in a decoder layer.

Costs count visual-token FLOPs only. The simplified per-layer cost is
F(n) = 4 n^2 d + 24 n d^2; the exact form itemizes QKV projections,
rotary embedding, attention core, output projection, and the gated FFN.
All results are exact integers (Python ints), ratios are floats.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError

MODES = ("simplified", "exact")


def _count(value, name: str, minimum: int = 0) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ValidationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value


def layer_flops_simplified(n: int, d: int) -> int:
    """Per-layer cost 4 n^2 d + 24 n d^2 for n tokens at hidden size d."""
    n = _count(n, "n")
    d = _count(d, "d", 1)
    return 4 * n * n * d + 24 * n * d * d


def layer_flops_exact(n: int, d: int, h: int, m: int,
                      include_norm_term: bool = False) -> dict:
    """Itemized per-layer cost; returns each term plus their total.

    Terms: QKV projections 6nd^2, rotary embedding 6nd, attention core
    4n^2 d + 4n^2 h, output projection 2nd^2, FFN gate+up 4nmd, activation
    2nm, FFN down 2nmd. ``include_norm_term`` adds a literal 5nmd
    normalization figure reproduced from one published breakdown; it
    contradicts the O(n) cost of normalization and is off by default.
    """
    n = _count(n, "n")
    d = _count(d, "d", 1)
    h = _count(h, "h", 1)
    m = _count(m, "m", 1)
    if d % h != 0:
        raise ValidationError(f"d {d} not divisible by h {h}")
    terms = {
        "qkv_proj": 6 * n * d * d,
        "rope": 6 * n * d,
        "attention_core": 4 * n * n * d + 4 * n * n * h,
        "output_proj": 2 * n * d * d,
        "ffn_gate_up": 4 * n * m * d,
        "activation": 2 * n * m,
        "ffn_down": 2 * n * m * d,
    }
    if include_norm_term:
        terms["norm_term"] = 5 * n * m * d
    terms["total"] = sum(terms.values())
    return terms


@dataclass
class FlopsConfig:
    """Geometry and pruning plan: n tokens, prune at layer k keeping `keep`."""

    n: int
    d: int
    h: int
    m: int
    layers: int
    prune_layer: int
    keep: int
    mode: str = "simplified"
    include_norm_term: bool = False

    def __post_init__(self):
        _count(self.n, "n", 1)
        _count(self.d, "d", 1)
        _count(self.h, "h", 1)
        _count(self.m, "m", 1)
        _count(self.layers, "layers", 1)
        _count(self.prune_layer, "prune_layer", 0)
        _count(self.keep, "keep", 1)
        if self.d % self.h != 0:
            raise ValidationError(f"d {self.d} not divisible by h {self.h}")
        if self.prune_layer > self.layers:
            raise ValidationError(
                f"prune_layer {self.prune_layer} exceeds layer count {self.layers}"
            )
        if self.keep > self.n:
            raise ValidationError(f"keep {self.keep} exceeds token count {self.n}")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")

    def layer_cost(self, n_tokens: int) -> int:
        if self.mode == "simplified":
            return layer_flops_simplified(n_tokens, self.d)
        return layer_flops_exact(n_tokens, self.d, self.h, self.m,
                                 self.include_norm_term)["total"]


def total_flops(cfg: FlopsConfig) -> tuple[int, int]:
    """(baseline, pruned) totals: L*F(n) vs k*F(n) + (L-k)*F(keep)."""
    full = cfg.layer_cost(cfg.n)
    pruned_layer = cfg.layer_cost(cfg.keep)
    baseline = cfg.layers * full
    pruned = cfg.prune_layer * full + (cfg.layers - cfg.prune_layer) * pruned_layer
    return baseline, pruned


def reduction_ratio(cfg: FlopsConfig) -> float:
    """Fraction of total FLOPs removed: 1 - [k F(n) + (L-k) F(keep)] / [L F(n)]."""
    baseline, pruned = total_flops(cfg)
    return 1.0 - pruned / baseline


def approx_reduction(r: float, k: int, layers: int) -> float:
    """Closed-form approximation ((L - k) / L) * r with r the removal ratio."""
    k = _count(k, "k")
    layers = _count(layers, "layers", 1)
    if not 0.0 <= r <= 1.0:
        raise ValidationError(f"r must be in [0, 1], got {r!r}")
    if k > layers:
        raise ValidationError(f"k {k} exceeds layer count {layers}")
    return (layers - k) / layers * r


def pruning_overhead(n: int, h: int, d: int) -> tuple[int, float]:
    """Scoring cost (2nhd covariance + 4nh^3 eigen) and its per-layer ratio."""
    n = _count(n, "n", 1)
    h = _count(h, "h", 1)
    d = _count(d, "d", 1)
    flops = 2 * n * h * d + 4 * n * h ** 3
    return flops, flops / layer_flops_simplified(n, d)


def remaining_pct(cfg: FlopsConfig, text_tokens: int = 0) -> float:
    """Remaining-FLOPs percentage, optionally with a fixed text-token load.

    Text tokens ride along unpruned: every layer processes them, so the
    fraction is [k F(n+t) + (L-k) F(keep+t)] / [L F(n+t)] * 100.
    """
    t = _count(text_tokens, "text_tokens")
    full = cfg.layer_cost(cfg.n + t)
    pruned_layer = cfg.layer_cost(cfg.keep + t)
    num = cfg.prune_layer * full + (cfg.layers - cfg.prune_layer) * pruned_layer
    return 100.0 * num / (cfg.layers * full)


def calibrate_text_tokens(cfg: FlopsConfig, anchor_pct: float,
                          t_max: int = 300, max_gap: float = 1.0) -> dict | None:
    """Smallest text-token count t in [0, t_max] bringing the model within
    max_gap percentage points of a published remaining-FLOPs anchor, or
    None if no t qualifies."""
    for t in range(t_max + 1):
        pct = remaining_pct(cfg, t)
        if abs(pct - anchor_pct) <= max_gap:
            return {"text_tokens": t, "remaining_pct": pct,
                    "gap_points": abs(pct - anchor_pct)}
    return None


def flops_report(cfg: FlopsConfig, *, text_tokens: int = 0,
                 anchor_pct: float | None = None) -> dict:
    """Full report dict: per-layer and total costs, ratios, overhead, and an
    optional calibration block against a published remaining-FLOPs anchor."""
    baseline, pruned = total_flops(cfg)
    overhead_flops, overhead_ratio = pruning_overhead(cfg.n, cfg.h, cfg.d)
    removal = 1.0 - cfg.keep / cfg.n
    report = {
        "config": {
            "tokens": cfg.n, "hidden": cfg.d, "heads": cfg.h, "ffn": cfg.m,
            "layers": cfg.layers, "prune_layer": cfg.prune_layer,
            "keep": cfg.keep, "mode": cfg.mode,
            "include_norm_term": cfg.include_norm_term,
            "text_tokens": text_tokens,
        },
        "per_layer_full": cfg.layer_cost(cfg.n),
        "per_layer_pruned": cfg.layer_cost(cfg.keep),
        "total_baseline": baseline,
        "total_pruned": pruned,
        "reduction_ratio": reduction_ratio(cfg),
        "approx_reduction": approx_reduction(removal, cfg.prune_layer, cfg.layers),
        "remaining_pct": remaining_pct(cfg, text_tokens),
        "overhead": {"flops": overhead_flops, "ratio_vs_layer": overhead_ratio},
    }
    if cfg.mode == "exact":
        report["terms_full"] = layer_flops_exact(cfg.n, cfg.d, cfg.h, cfg.m,
                                                 cfg.include_norm_term)
    if anchor_pct is not None:
        model_pct = remaining_pct(cfg, 0)
        report["calibration"] = {
            "anchor_remaining_pct": anchor_pct,
            "model_remaining_pct": model_pct,
            "gap_points": abs(model_pct - anchor_pct),
            "note": (
                "gap attributed to text tokens: published totals include an "
                "unreported prompt length; text_tokens_closing_gap is the "
                "smallest t whose F(n+t)-corrected fraction lands within 1 "
                "point of the anchor"
            ),
            "text_tokens_closing_gap": calibrate_text_tokens(cfg, anchor_pct),
        }
    return report
