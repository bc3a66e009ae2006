"""Command-line front end: train, sweep, probe, report.

Exit codes: 0 success, 2 bad config, 3 dataset/checkpoint/artifact
error, 4 divergence, 1 anything unexpected.  Failures print a single
machine-readable JSON object to stdout.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import RunConfig
from .errors import (CheckpointError, ConfigError, DatasetError, DivergenceError,
                     LayerShapeError)
from .geometry import (extract_affine, input_flip_radius, param_flip_radius,
                       write_stability_reports_json)
from .harness import paper_mlp_grid, run_training, sweep
from .nn.engine import forward
from .prng import stream
from .report import write_report

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4


def _error_exit(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": {"code": code, "kind": kind, "message": message}}))
    return code


def cmd_train(args) -> int:
    config = RunConfig.from_file(args.config)
    if args.seed is not None:
        d = config.to_dict()
        d["seed"] = args.seed
        config = RunConfig.from_dict(d)
    if args.no_metrics:
        d = config.to_dict()
        d["metrics_enabled"] = False
        config = RunConfig.from_dict(d)
    out_dir = Path(args.out) if args.out else Path("runs") / Path(args.config).stem
    result = run_training(config, out_dir=out_dir)
    print(json.dumps(result.summary.to_json_dict(), indent=2, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    base = RunConfig.from_file(args.config)
    if args.grid == "paper_mlp":
        configs = paper_mlp_grid(base)
    else:
        raise ConfigError(f"unknown grid {args.grid!r}")
    table = sweep(configs)
    out_dir = Path(args.out) if args.out else Path("runs") / f"sweep-{Path(args.config).stem}"
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.json", "w") as fh:
        json.dump(table, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for row in table["runs"]:
        s = row["summary"]
        if s is None:
            print(f"run {row['index']}: FAILED ({row['error']})")
        else:
            marker = " *best" if row["index"] == table["best_index"] else ""
            print(f"run {row['index']}: {s['config']['optimizer']} lr={s['config']['lr']} "
                  f"wd={s['config']['weight_decay']} val={s['best_val_score']:.4f} "
                  f"rho={s['rho']}{marker}")
    return 0


def cmd_probe(args) -> int:
    model, params, meta = load_checkpoint(args.checkpoint)
    input_shape = tuple(meta.get("input_shape", []))
    if not input_shape:
        raise CheckpointError(f"{args.checkpoint}: metadata lacks input_shape")
    rng_anchor = stream(args.seed, "anchors")
    rng_dir = stream(args.seed, "directions")
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent

    reports = []
    residual_rows = []
    for a in range(args.anchors):
        x = rng_anchor.standard_normal(input_shape)
        if args.space == "input":
            report = input_flip_radius(model, params, x, args.directions,
                                       args.resolution, rng_dir)
        else:
            report = param_flip_radius(model, params, x, args.directions,
                                       args.resolution, rng_dir)
        reports.append(report)

        amap = extract_affine(model, params, x)
        fx = forward(model, params, x[None], mode="eval").output[0]
        residual_anchor = float(np.max(np.abs(fx - amap.apply(x))))
        residual_nearby = ""
        radius = report.flip_radius_input
        if radius is not None and radius > 0:
            worst = 0.0
            for _ in range(5):
                u = rng_dir.standard_normal(x.size)
                u /= np.linalg.norm(u)
                xp = x + (0.5 * radius) * u.reshape(x.shape)
                fxp = forward(model, params, xp[None], mode="eval").output[0]
                worst = max(worst, float(np.max(np.abs(fxp - amap.apply(xp)))))
            residual_nearby = repr(worst)
        residual_rows.append([a, repr(residual_anchor), residual_nearby,
                              "" if radius is None else repr(radius),
                              "" if report.flip_radius_param is None
                              else repr(report.flip_radius_param),
                              int(report.degenerate)])

    out_dir.mkdir(parents=True, exist_ok=True)
    write_stability_reports_json(out_dir / "stability_reports.json", reports)
    with open(out_dir / "affine_residuals.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["anchor", "residual_at_anchor", "residual_nearby_max",
                         "flip_radius_input", "flip_radius_param", "degenerate"])
        writer.writerows(residual_rows)

    key = "flip_radius_input" if args.space == "input" else "flip_radius_param"
    radii = [getattr(r, key) for r in reports]
    positive = sum(1 for r in radii if r is not None and r > args.resolution)
    print(json.dumps({
        "anchors": args.anchors,
        "space": args.space,
        "positive_radius_fraction": positive / max(1, args.anchors),
        "degenerate_anchors": sum(1 for r in reports if r.degenerate),
        "out_dir": str(out_dir),
    }, indent=2))
    return 0


def cmd_report(args) -> int:
    written = write_report(args.run, fmt=args.format)
    print(json.dumps({"written": [str(p) for p in written]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regimescope",
        description="Train ReLU networks with activation-regime instrumentation, "
                    "probe their local geometry, and render reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training configuration")
    p_train.add_argument("--config", required=True, help="flat key=value config file")
    p_train.add_argument("--out", help="artifacts directory (default runs/<config stem>)")
    p_train.add_argument("--seed", type=int, help="override the config seed")
    p_train.add_argument("--no-metrics", action="store_true",
                         help="disable per-batch instrumentation")
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="run a config grid and pick best-by-validation")
    p_sweep.add_argument("--config", required=True, help="base config file")
    p_sweep.add_argument("--grid", default="paper_mlp", help="grid name (paper_mlp)")
    p_sweep.add_argument("--out", help="output directory")
    p_sweep.set_defaults(func=cmd_sweep)

    p_probe = sub.add_parser("probe", help="stability radii and affine residuals")
    p_probe.add_argument("--checkpoint", required=True)
    p_probe.add_argument("--anchors", type=int, default=100)
    p_probe.add_argument("--directions", type=int, default=8)
    space = p_probe.add_mutually_exclusive_group()
    space.add_argument("--input", dest="space", action="store_const", const="input")
    space.add_argument("--param", dest="space", action="store_const", const="param")
    p_probe.set_defaults(space="param")
    p_probe.add_argument("--resolution", type=float, default=1e-9)
    p_probe.add_argument("--seed", type=int, default=0)
    p_probe.add_argument("--out", help="output directory (default: checkpoint directory)")
    p_probe.set_defaults(func=cmd_probe)

    p_report = sub.add_parser("report", help="render figure and CSV for a finished run")
    p_report.add_argument("--run", required=True, help="run artifacts directory")
    p_report.add_argument("--format", choices=("svg", "csv"), default="svg")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _error_exit(EXIT_CONFIG, "config", str(exc))
    except (DatasetError, CheckpointError) as exc:
        return _error_exit(EXIT_DATA, "data", str(exc))
    except DivergenceError as exc:
        return _error_exit(EXIT_DIVERGENCE, "divergence", str(exc))
    except LayerShapeError as exc:
        return _error_exit(1, "model", str(exc))


if __name__ == "__main__":
    sys.exit(main())
