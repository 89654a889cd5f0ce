"""Command-line surface.

Subcommands: profile, detect, score, prune, flops, bench, simulate, synth.
Structured results go to JSON, curves to CSV; --plot renders a matplotlib
figure next to the delimited output. Outputs carry no timestamps, so a
rerun with the same inputs produces identical bytes (timing fields of
bench excepted).

Exit codes: 0 success, 2 usage or validation, 3 no collapse detected,
4 data or format error, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import run_bench
from .ecl_detector import (
    detect_ecl,
    layerwise_profile,
    profile_csv_text,
    synth_collapse_dump,
)
from .errors import EntropruneError, ValidationError
from .flops_model import FlopsConfig, flops_report
from .sim_transformer import (
    CalibrationSample,
    PrunePlan,
    SimConfig,
    sim_forward,
    sim_init,
    sim_run_pipeline,
    trace_to_json,
)
from .tensor_io import load_dump, save_dump, write_npy
from .token_scorer import apply_mask, parse_budget, score_tokens, select_keep

THREADS_ENV = "ENTROPRUNE_THREADS"


def _resolve_threads(args) -> int:
    value = getattr(args, "threads", None)
    if value is None and os.environ.get(THREADS_ENV):
        raw = os.environ[THREADS_ENV]
        try:
            value = int(raw)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    if value is None:
        return 1
    if value < 1:
        raise ValidationError(f"threads must be >= 1, got {value}")
    return value


def _write_json(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _plot_target(args) -> Path | None:
    plot = getattr(args, "plot", None)
    if plot is None:
        return None
    if plot != "@auto":
        return Path(plot)
    if not args.out:
        raise ValidationError("--plot without a path needs --out to derive one from")
    return Path(args.out).with_suffix(".png")


def _add_plot(parser) -> None:
    parser.add_argument("--plot", nargs="?", const="@auto", metavar="PNG",
                        help="render a figure (default: output path with .png suffix)")


def _add_threads(parser) -> None:
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker cap (default 1; {THREADS_ENV} mirrors this)")


def _parse_layer(value: str):
    if value == "auto":
        return "auto"
    try:
        layer = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"layer must be 'auto' or an integer, got {value!r}")
    return layer


def cmd_profile(args) -> int:
    dump = load_dump(args.manifest)
    profile = layerwise_profile(dump, args.state, topk=args.topk,
                                aggregate=args.aggregate,
                                threads=_resolve_threads(args))
    text = profile_csv_text(profile)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    target = _plot_target(args)
    if target is not None:
        from .figures import plot_profile

        plot_profile(profile, target)
    return 0


def cmd_detect(args) -> int:
    dump = load_dump(args.manifest)
    profile = layerwise_profile(dump, args.state, topk=args.topk,
                                aggregate=args.aggregate,
                                threads=_resolve_threads(args))
    report = detect_ecl(profile, min_drop=args.min_drop, mode=args.mode)
    payload = {
        "state": report.state,
        "aggregate": profile.aggregate,
        "mode": report.mode,
        "min_drop": report.min_drop,
        "ecl": report.ecl,
        "drop": report.drop,
        "drops": [
            {"layer": layer, "drop": float(report.drops[layer - 1])}
            for layer in range(1, dump.layers)
        ],
        "profile": {
            "layers": profile.layers.tolist(),
            "values": profile.values.tolist(),
        },
    }
    _write_json(payload, args.out)
    target = _plot_target(args)
    if target is not None:
        from .figures import plot_profile

        plot_profile(profile, target, ecl=report.ecl)
    return 0


def _resolve_prune_layer(args, dump, threads):
    if args.layer == "auto":
        profile = layerwise_profile(dump, args.state, threads=threads)
        return detect_ecl(profile, min_drop=args.min_drop).ecl, True
    layer = args.layer
    if not 1 <= layer <= dump.layers:
        raise ValidationError(f"layer {layer} outside 1..{dump.layers}")
    return layer, False


def _score_samples(dump, state, layer, threads):
    for sample in dump.samples:
        states = getattr(sample, state)[layer - 1]
        yield sample, states, score_tokens(states, dump.heads, threads=threads)


def cmd_score(args) -> int:
    dump = load_dump(args.manifest)
    if not dump.samples:
        raise ValidationError("manifest has no samples to score")
    threads = _resolve_threads(args)
    layer, was_auto = _resolve_prune_layer(args, dump, threads)
    samples = []
    for sample, states, scores in _score_samples(dump, args.state, layer, threads):
        entry = {
            "id": sample.sample_id,
            "n_tokens": states.shape[0],
            "scores": [[i, float(s)] for i, s in enumerate(scores)],
        }
        if args.budget is not None:
            mask = select_keep(scores, parse_budget(args.budget, states.shape[0]))
            entry["budget"] = mask.budget
            entry["kept"] = mask.kept.tolist()
        samples.append(entry)
    payload = {
        "state": args.state,
        "layer": layer,
        "ecl_detected": layer if was_auto else None,
        "heads": dump.heads,
        "samples": samples,
    }
    _write_json(payload, args.out)
    return 0


def cmd_prune(args) -> int:
    dump = load_dump(args.manifest)
    if not dump.samples:
        raise ValidationError("manifest has no samples to prune")
    threads = _resolve_threads(args)
    layer, was_auto = _resolve_prune_layer(args, dump, threads)
    emit_dir = Path(args.emit_pruned) if args.emit_pruned else None
    if emit_dir is not None:
        emit_dir.mkdir(parents=True, exist_ok=True)
    samples = []
    for sample, states, scores in _score_samples(dump, args.state, layer, threads):
        mask = select_keep(scores, parse_budget(args.budget, states.shape[0]))
        entry = {
            "id": sample.sample_id,
            "n_tokens": states.shape[0],
            "budget": mask.budget,
            "kept": mask.kept.tolist(),
            "scores": [[i, float(s)] for i, s in enumerate(scores)],
        }
        if emit_dir is not None:
            files = {}
            for state in ("query", "key"):
                pruned = apply_mask(getattr(sample, state)[layer - 1], mask)
                fname = f"{sample.sample_id}_layer{layer:03d}_{state}_pruned.npy"
                write_npy(emit_dir / fname, pruned)
                files[state] = fname
            entry["files"] = files
        samples.append(entry)
    payload = {
        "state": args.state,
        "layer": layer,
        "ecl_detected": layer if was_auto else None,
        "heads": dump.heads,
        "budget_requested": str(args.budget),
        "samples": samples,
    }
    _write_json(payload, args.out)
    return 0


def cmd_flops(args) -> int:
    ffn = args.ffn if args.ffn is not None else math.ceil(8 * args.hidden / 3)
    keep = min(parse_budget(args.keep, args.tokens), args.tokens)
    cfg = FlopsConfig(n=args.tokens, d=args.hidden, h=args.heads, m=ffn,
                      layers=args.layers, prune_layer=args.prune_layer,
                      keep=keep, mode=args.mode,
                      include_norm_term=args.include_norm_term)
    report = flops_report(cfg, text_tokens=args.text_tokens,
                          anchor_pct=args.anchor_pct)
    _write_json(report, args.out)
    if args.out:
        line = (
            f"reduction_ratio {report['reduction_ratio']:.6f} "
            f"(approx {report['approx_reduction']:.6f}), "
            f"remaining {report['remaining_pct']:.2f}%"
        )
        if "calibration" in report:
            cal = report["calibration"]
            closing = cal["text_tokens_closing_gap"]
            line += (
                f"; anchor {cal['anchor_remaining_pct']:.2f}% vs model "
                f"{cal['model_remaining_pct']:.2f}% (gap {cal['gap_points']:.2f} points)"
            )
            if closing is not None:
                line += f", closed by t={closing['text_tokens']} text tokens"
        print(line)
    target = _plot_target(args)
    if target is not None:
        from .figures import plot_flops

        plot_flops(cfg, target)
    return 0


def cmd_bench(args) -> int:
    report = run_bench(args.head_dim, args.heads, tokens=args.tokens,
                       iters=args.iters, seed=args.seed)
    _write_json(report, args.out)
    if args.out:
        print(
            f"naive {report['median_naive_s'] * 1e6:.1f} us, "
            f"fast {report['median_fast_s'] * 1e6:.1f} us, "
            f"speedup {report['measured_speedup']:.2f}x "
            f"(theoretical {report['theoretical_speedup']:.0f}x)"
        )
    target = _plot_target(args)
    if target is not None:
        from .figures import plot_bench

        plot_bench(report, target)
    return 0


def cmd_simulate(args) -> int:
    cfg = SimConfig(layers=args.layers, heads=args.heads, hidden=args.hidden,
                    ffn=args.ffn, tokens=args.tokens, seed=args.seed)
    model = sim_init(cfg)
    scale = cfg.hidden ** -0.5
    embeddings = scale * np.random.default_rng([cfg.seed, 17]).standard_normal(
        (cfg.tokens, cfg.hidden)
    )
    if args.prune_layer is None:
        if args.budget is not None:
            raise ValidationError("--budget requires --prune-layer")
        trace = sim_forward(model, embeddings)
    else:
        if args.budget is None:
            raise ValidationError("--prune-layer requires --budget")
        budget = parse_budget(args.budget, cfg.tokens)
        if args.prune_layer == "auto":
            calib_rng = np.random.default_rng([cfg.seed, 29])
            calibration = [
                CalibrationSample(
                    embeddings=scale * calib_rng.standard_normal((cfg.tokens, cfg.hidden))
                )
                for _ in range(args.calib_samples)
            ]
            trace = sim_run_pipeline(model, embeddings, budget, calibration,
                                     state=args.state, min_drop=args.min_drop)
        else:
            if not 1 <= args.prune_layer <= cfg.layers:
                raise ValidationError(
                    f"prune layer {args.prune_layer} outside 1..{cfg.layers}"
                )
            trace = sim_forward(
                model, embeddings,
                prune=PrunePlan(layer=args.prune_layer, budget=budget, state=args.state),
            )
    payload = trace_to_json(trace)
    _write_json(payload, args.out)
    if args.dump_tensors:
        out_dir = Path(args.dump_tensors)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_npy(out_dir / "final_hidden.npy", trace.final_hidden)
        for idx in range(cfg.layers):
            write_npy(out_dir / f"layer{idx + 1:03d}_query.npy", trace.captured_query[idx])
            write_npy(out_dir / f"layer{idx + 1:03d}_key.npy", trace.captured_key[idx])
    return 0


def cmd_synth(args) -> int:
    dump = synth_collapse_dump(args.layers, args.tokens, args.hidden, args.heads,
                               args.collapse, args.rank_hi, args.rank_lo,
                               args.noise, args.seed, samples=args.samples)
    manifest = save_dump(dump, args.out_dir)
    print(manifest)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entroprune",
        description="Matrix-entropy analysis and token pruning toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="layer-wise entropy profile CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--state", choices=("query", "key"), default="query")
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--aggregate", choices=("mean", "median"), default="mean")
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    _add_plot(p)
    _add_threads(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("detect", help="detect the entropy collapse layer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--state", choices=("query", "key"), default="query")
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--aggregate", choices=("mean", "median"), default="mean")
    p.add_argument("--min-drop", type=float, default=0.0)
    p.add_argument("--mode", choices=("absolute", "relative"), default="absolute")
    p.add_argument("--out", default=None, help="JSON path (default stdout)")
    _add_plot(p)
    _add_threads(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("score", help="per-token entropy scores at a layer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--state", choices=("query", "key"), default="query")
    p.add_argument("--layer", type=_parse_layer, default="auto",
                   help="'auto' detects the collapse layer (default)")
    p.add_argument("--budget", default=None, help="count or percent, e.g. 192 or 33.3%%")
    p.add_argument("--min-drop", type=float, default=0.0)
    p.add_argument("--out", default=None)
    _add_threads(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("prune", help="select kept tokens, optionally emit pruned tensors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--state", choices=("query", "key"), default="query")
    p.add_argument("--layer", type=_parse_layer, default="auto")
    p.add_argument("--budget", required=True, help="count or percent, e.g. 192 or 33.3%%")
    p.add_argument("--min-drop", type=float, default=0.0)
    p.add_argument("--emit-pruned", default=None, metavar="DIR")
    p.add_argument("--out", default=None)
    _add_threads(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("flops", help="analytic FLOPs and reduction report")
    p.add_argument("--tokens", type=int, required=True)
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--heads", type=int, required=True)
    p.add_argument("--ffn", type=int, default=None,
                   help="FFN width (default ceil(8*hidden/3))")
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--prune-layer", type=int, required=True)
    p.add_argument("--keep", required=True, help="count or percent")
    p.add_argument("--mode", choices=("simplified", "exact"), default="simplified")
    p.add_argument("--include-norm-term", action="store_true")
    p.add_argument("--text-tokens", type=int, default=0)
    p.add_argument("--anchor-pct", type=float, default=None,
                   help="published remaining-FLOPs %% to calibrate against")
    p.add_argument("--out", default=None)
    _add_plot(p)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("bench", help="time naive vs fast entropy routes")
    p.add_argument("--head-dim", type=int, default=128)
    p.add_argument("--heads", type=int, default=32)
    p.add_argument("--tokens", type=int, default=500)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    _add_plot(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("simulate", help="toy transformer forward with optional pruning")
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--heads", type=int, required=True)
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--ffn", type=int, required=True)
    p.add_argument("--tokens", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prune-layer", type=_parse_layer, default=None,
                   help="'auto' or a layer index; omit for no pruning")
    p.add_argument("--budget", default=None, help="count or percent")
    p.add_argument("--state", choices=("query", "key"), default="query")
    p.add_argument("--calib-samples", type=int, default=4)
    p.add_argument("--min-drop", type=float, default=0.0)
    p.add_argument("--dump-tensors", default=None, metavar="DIR")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth", help="generate a synthetic collapse dump")
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--tokens", type=int, default=64)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--collapse", type=int, default=3)
    p.add_argument("--rank-hi", type=int, default=24)
    p.add_argument("--rank-lo", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except EntropruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
