"""Command line front end.

    probsens run CONFIG [--out DIR] [--seed S] [--n N] [--reps R] [--workers W]

Exit status: 0 on success, 1 for configuration or I/O errors, 2 for
numerical failures.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import ConfigError, SensitivityError
from .pipeline import run
from .report import EmitError, emit

log = logging.getLogger("probsens")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="probsens", description="Probabilistic sensitivity analysis "
                                "w.r.t. input distribution parameters.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="execute a run configuration")
    r.add_argument("config", help="TOML run configuration")
    r.add_argument("--out", help="output directory (overrides [output] dir)")
    r.add_argument("--seed", type=int, help="master seed")
    r.add_argument("--n", type=int, help="Monte Carlo sample size per repetition")
    r.add_argument("--reps", type=int, help="number of repetitions")
    r.add_argument("--workers", type=int, default=1, help="worker processes for repetitions")
    r.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"seed": args.seed, "n": args.n, "repetitions": args.reps,
                                        "dir": args.out})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out_dir = cfg.output_dir or "."
    try:
        report = run(cfg, workers=max(1, args.workers))
    except ConfigError as exc:
        print(f"config error: {args.config}: {exc}", file=sys.stderr)
        return 1
    except SensitivityError as exc:
        print(f"numerical failure: {args.config}: {exc}", file=sys.stderr)
        return 2
    try:
        paths = emit(report, out_dir)
    except EmitError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    print(f"report sha256 {report.digest}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
