"""Command line entry point: ``dcsmote run|sweep|validate|report``.

Exit codes: 0 success, 1 config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import (ConfigError, emit_report, format_table, load_config, read_report,
                      run_experiment, run_sweep, sweep_csv, validate)

log = logging.getLogger("dcsmote")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _overrides(args):
    return {"seed": args.seed, "trials": args.trials}


def build_parser():
    parser = argparse.ArgumentParser(prog="dcsmote", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", type=Path)
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--trials", type=int, help="override the trial count")
        p.add_argument("--out-dir", type=Path, default=Path("results"))
        p.add_argument("--jobs", type=int, default=1, help="trials run in parallel")

    common(sub.add_parser("run", help="run a multi-method experiment"))
    sw = sub.add_parser("sweep", help="DC(SMOTE) accuracy over a (k, alpha) grid")
    common(sw)
    sw.add_argument("--k", type=_ints, required=True, help="comma-separated neighbor counts")
    sw.add_argument("--alpha", type=_floats, required=True, help="comma-separated alphas")
    va = sub.add_parser("validate", help="check a config without running it")
    va.add_argument("config", type=Path)
    rp = sub.add_parser("report", help="print the summary table of a finished run")
    rp.add_argument("path", type=Path, help="report.json or the directory holding it")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            validate(load_config(args.config))
            print(f"{args.config}: ok")
            return 0
        if args.command == "report":
            print(format_table(read_report(args.path)))
            return 0
        cfg = load_config(args.config, _overrides(args))
        validate(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "run":
            report = run_experiment(cfg, args.jobs)
            paths = emit_report(report, args.out_dir)
            print(format_table(report))
            print(f"\nwrote {', '.join(str(p) for p in paths.values())}")
        else:
            grid = run_sweep(cfg, args.k, args.alpha, args.jobs)
            args.out_dir.mkdir(parents=True, exist_ok=True)
            out = args.out_dir / "sweep.csv"
            out.write_text(sweep_csv(grid, args.k, args.alpha), encoding="utf-8")
            print(sweep_csv(grid, args.k, args.alpha), end="")
            print(f"\nwrote {out}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        log.debug("run failed", exc_info=True)
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    return 0
