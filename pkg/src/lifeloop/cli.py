"""Command-line interface: ``run``, ``compare`` and ``verify``.

Exit codes: 0 success, 1 mission fault, 2 config error, 3 acceptance failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, HarnessConfig, load_config
from .harness import run_mission
from .scenarios import get_scenario

EXIT_OK, EXIT_FAULT, EXIT_CONFIG, EXIT_ACCEPT = 0, 1, 2, 3


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "raw_pid", False):
        cfg = dataclasses.replace(cfg, mission=dataclasses.replace(cfg.mission, raw_pid=True))
    return cfg


def _scenario(name: str, minutes: float | None):
    try:
        sc = get_scenario(name)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"scenario {name!r}: {exc}") from exc
    if minutes is not None:
        sc = dataclasses.replace(sc, duration_min=minutes)
    return sc


def _run_one(job):
    scenario, controller, cfg, seed = job
    return run_mission(scenario, controller, cfg, seed)


def cmd_run(args) -> int:
    from .report import emit_outputs, format_summary

    cfg = _load(args)
    sc = _scenario(args.scenario, args.minutes)
    trace, summary = run_mission(sc, args.controller, cfg, args.seed)
    paths = emit_outputs(trace, summary, args.out, figures=not args.no_figures)
    print(format_summary(summary))
    for p in paths:
        print(f"wrote {p}")
    return EXIT_FAULT if summary.flagged else EXIT_OK


def cmd_compare(args) -> int:
    from .report import (aggregate_table, render_figures, write_rows_csv, write_summary_csv,
                         write_trace_csv)

    cfg = _load(args)
    scenarios = [_scenario(s, args.minutes) for s in args.scenario]
    seeds = list(range(args.seed0, args.seed0 + args.seeds))
    jobs = [(sc, ctl, cfg, seed) for sc in scenarios for seed in seeds for ctl in ("mpc", "pid")]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    out = Path(args.out)
    summaries = [s for _, s in results]
    pairs = [(summaries[i], summaries[i + 1]) for i in range(0, len(summaries), 2)]
    rows, table = aggregate_table(pairs)
    write_summary_csv(summaries, out / "summaries.csv")
    write_rows_csv(rows, out / "aggregate.csv")
    (out / "aggregate.txt").write_text(table + "\n")
    for i in range(0, len(results), 2):
        (tm, sm), (tp, _) = results[i], results[i + 1]
        stem = f"{sm.scenario}_s{sm.seed}"
        if args.traces:
            write_trace_csv(tm, out / f"{stem}_mpc_trace.csv")
            write_trace_csv(tp, out / f"{stem}_pid_trace.csv")
        if not args.no_figures:
            render_figures([tm, tp], out, stem)
    print(table)
    return EXIT_FAULT if any(s.flagged for s in summaries) else EXIT_OK


def cmd_verify(args) -> int:
    from .golden import golden_report

    ok, text = golden_report()
    print(text)
    return EXIT_OK if ok else EXIT_ACCEPT


def cmd_config(args) -> int:
    from .config import to_dict

    cfg = load_config(args.config) if args.config else HarnessConfig()
    print(json.dumps(to_dict(cfg), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lifeloop", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config document")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--raw-pid", action="store_true",
                       help="PID commands bypass the safety filter")
        p.add_argument("--minutes", type=float, help="override the scenario duration cap")
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    p = sub.add_parser("run", help="simulate one mission")
    p.add_argument("--scenario", default="A", help="A, B, C or a scenario JSON path")
    p.add_argument("--controller", choices=("mpc", "pid"), default="mpc")
    p.add_argument("--seed", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="paired MPC and PID runs over seeds")
    p.add_argument("--scenario", nargs="+", default=["A", "B", "C"])
    p.add_argument("--seeds", type=int, default=5, help="number of paired seeds")
    p.add_argument("--seed0", type=int, default=0, help="first seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--traces", action="store_true", help="also write trace CSVs")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="desk-constant golden suite")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("config", help="print the annotated configuration")
    p.add_argument("--config")
    p.set_defaults(func=cmd_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", 0) < 0 or getattr(args, "seeds", 1) < 1:
        print("error: seeds must be non-negative and --seeds at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
