"""Scenario runner CLI.

Subcommands: run, sweep, track-export, serve.
Exit codes: 0 ok, 1 runtime failure, 2 usage/config error, 3 collision halt.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, ScenarioConfig, apply_overrides, load_config
from .engine import (
    compute_throughput,
    export_record,
    lane_change_counts,
    queue_stats,
    run_scenario,
)
from .track import build_track, export_polyline_csv

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_COLLISION = 3


def _default_out() -> str:
    return os.environ.get("COOPSIM_OUT", "out")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coopsim",
        description="Multi-lane traffic simulator: egocentric and "
                    "cooperative driving policies on a closed track.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario")
    run_p.add_argument("config", help="scenario YAML file")
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument("--seed", type=int, default=None, help="seed override")
    run_p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted config override")

    sweep_p = sub.add_parser("sweep", help="run and compare scenarios")
    sweep_p.add_argument("configs", nargs="+", help="scenario YAML files")
    sweep_p.add_argument("--out", default=None)
    sweep_p.add_argument("--seeds", type=int, default=1,
                         help="number of seeds per scenario")

    track_p = sub.add_parser("track-export", help="export track polyline CSV")
    track_p.add_argument("config", help="scenario YAML file")
    track_p.add_argument("--out", default=None)
    track_p.add_argument("--resolution", type=float, default=0.05)

    serve_p = sub.add_parser("serve", help="serve the gamified cockpit gateway")
    serve_p.add_argument("config", help="scenario YAML file")
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8700)
    serve_p.add_argument("--frame-rate", type=float, default=30.0)
    return parser


def _load(path: str, overrides: list[str], seed) -> ScenarioConfig:
    cfg = load_config(path)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    if seed is not None:
        cfg = apply_overrides(cfg, [f"seed={seed}"])
    return cfg


def _run_report(record) -> str:
    tp = compute_throughput(
        record,
        window=min(record.config["throughput_window"], record.duration),
        warmup=record.config["warmup"],
    )
    q = queue_stats(record)
    lc = lane_change_counts(record)
    lines = [
        f"throughput: {tp.mean:.3f} ± {tp.std:.3f} cars/s "
        f"(window {tp.window:.0f} s)",
        f"max queue: {q['max_queue']} waiting vehicles",
        f"waiting time: {q['waiting_vehicle_seconds']:.1f} vehicle-seconds",
        f"lane changes: {lc['start']} started, {lc['complete']} completed",
        f"collisions: {len(record.collisions)}",
    ]
    return "\n".join(lines)


def cmd_run(args) -> int:
    try:
        cfg = _load(args.config, args.overrides, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    record = run_scenario(cfg)
    out = Path(args.out or _default_out())
    paths = export_record(record, out)
    print(f"record: {paths['csv']}")
    print(f"summary: {paths['summary']}")
    print(_run_report(record))
    if cfg.halt_on_collision and record.collisions:
        print("run halted on collision", file=sys.stderr)
        return EXIT_COLLISION
    return EXIT_OK


def cmd_sweep(args) -> int:
    if len(args.configs) < 2:
        print("sweep needs at least two scenarios to compare", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out or _default_out())
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    try:
        for path in args.configs:
            cfg = load_config(path)
            name = Path(path).stem
            means = []
            for k in range(args.seeds):
                run_cfg = apply_overrides(cfg, [f"seed={cfg.seed + k}"])
                record = run_scenario(run_cfg)
                export_record(record, out, prefix=f"{name}_seed{run_cfg.seed}")
                tp = compute_throughput(
                    record,
                    window=min(run_cfg.throughput_window, record.duration),
                    warmup=run_cfg.warmup,
                )
                means.append((tp.mean, tp.std))
            results[name] = {
                "policy": cfg.vehicles.policy,
                "preset": cfg.vehicles.preset,
                "mean": sum(m for m, _ in means) / len(means),
                "std_windows": sum(s for _, s in means) / len(means),
                "per_seed": means,
            }
    except ConfigError as exc:
        _dump_sweep(out, results)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # preserve partial results on any failed run
        _dump_sweep(out, results)
        print(f"sweep aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    # percent improvement cooperative vs egocentric per parameter set
    improvements = {}
    for preset in ("normal", "aggressive"):
        ego = [r for r in results.values()
               if r["preset"] == preset and r["policy"] == "egocentric"]
        coop = [r for r in results.values()
                if r["preset"] == preset and r["policy"] == "cooperative"]
        if ego and coop:
            improvements[preset] = 100.0 * (coop[0]["mean"] / ego[0]["mean"] - 1.0)
    _dump_sweep(out, results, improvements)
    print(f"{'scenario':<24}{'policy':<14}{'preset':<12}throughput [cars/s]")
    for name, r in results.items():
        print(f"{name:<24}{r['policy']:<14}{r['preset']:<12}"
              f"{r['mean']:.3f} ± {r['std_windows']:.3f}")
    for preset, imp in improvements.items():
        print(f"improvement ({preset}): {imp:+.1f}%")
    return EXIT_OK


def _dump_sweep(out: Path, results: dict, improvements: dict | None = None):
    with open(out / "sweep.json", "w") as f:
        json.dump({"results": results, "improvements": improvements or {}},
                  f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_track_export(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out or _default_out())
    out.mkdir(parents=True, exist_ok=True)
    path = out / "track.csv"
    export_polyline_csv(build_track(cfg.track), path, args.resolution)
    print(f"track polyline: {path}")
    return EXIT_OK


def cmd_serve(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    from .gateway import serve

    try:
        serve(cfg, host=args.host, port=args.port, frame_rate=args.frame_rate)
    except OSError as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": cmd_run,
        "sweep": cmd_sweep,
        "track-export": cmd_track_export,
        "serve": cmd_serve,
    }
    try:
        return handlers[args.command](args)
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
