"""Figure rendering for profiles, benchmarks, and FLOPs sweeps.

Figures are written straight to files (Agg backend, no display) next to
the delimited reports they accompany.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .ecl_detector import EntropyProfile
from .flops_model import FlopsConfig, remaining_pct

DPI = 120


def plot_profile(profile: EntropyProfile, path, ecl: int | None = None) -> Path:
    """Entropy-vs-layer curves: faint per-sample lines, bold aggregate,
    optional vertical marker at the detected collapse layer."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for row, sid in enumerate(profile.sample_ids):
        ax.plot(profile.layers, profile.per_sample[row], color="0.75",
                linewidth=0.8, label="samples" if row == 0 else None)
    ax.plot(profile.layers, profile.values, color="tab:blue", linewidth=2.0,
            marker="o", markersize=3, label=f"{profile.aggregate} over samples")
    if ecl is not None:
        ax.axvline(ecl, color="tab:red", linestyle="--", linewidth=1.2,
                   label=f"collapse layer {ecl}")
    ax.set_xlabel("layer")
    ax.set_ylabel("matrix entropy (nats)")
    ax.set_title(f"{profile.state} state entropy profile")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return Path(path)


def plot_bench(report: dict, path) -> Path:
    """Median per-token timings of both entropy routes, log scale."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    labels = ["naive", "fast"]
    times_us = [report["median_naive_s"] * 1e6, report["median_fast_s"] * 1e6]
    bars = ax.bar(labels, times_us, color=["tab:gray", "tab:blue"], width=0.6)
    ax.bar_label(bars, fmt="%.1f")
    ax.set_yscale("log")
    ax.set_ylabel("median time per token (us)")
    ax.set_title(
        f"head_dim={report['head_dim']}, heads={report['heads']}: "
        f"{report['measured_speedup']:.1f}x measured, "
        f"{report['theoretical_speedup']:.0f}x theoretical"
    )
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return Path(path)


def plot_flops(cfg: FlopsConfig, path, points: int = 97) -> Path:
    """Remaining-FLOPs percentage as the keep budget sweeps 1..n, with the
    configured keep marked."""
    keeps = sorted({max(1, round(cfg.n * i / (points - 1))) for i in range(points)})
    pcts = []
    for keep in keeps:
        sweep = FlopsConfig(n=cfg.n, d=cfg.d, h=cfg.h, m=cfg.m, layers=cfg.layers,
                            prune_layer=cfg.prune_layer, keep=keep, mode=cfg.mode,
                            include_norm_term=cfg.include_norm_term)
        pcts.append(remaining_pct(sweep))
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(keeps, pcts, color="tab:blue", linewidth=1.8)
    here = remaining_pct(cfg)
    ax.plot([cfg.keep], [here], "o", color="tab:red",
            label=f"keep={cfg.keep}: {here:.1f}%")
    ax.set_xlabel("tokens kept")
    ax.set_ylabel("remaining FLOPs (%)")
    ax.set_title(
        f"n={cfg.n}, d={cfg.d}, L={cfg.layers}, prune at layer {cfg.prune_layer} ({cfg.mode})"
    )
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return Path(path)
