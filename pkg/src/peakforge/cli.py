"""Command-line front end.

Only the standard library is imported at module level: thread-count
environment variables must be in place before numpy loads its BLAS, so
the heavy modules are imported inside ``main`` after ``--threads`` (or
the ``PEAKFORGE_THREADS`` fallback) has been applied.

Exit codes: 0 all stages converged, 1 usage or runtime error, 2 a solve
ran out of budget (partial outputs written and flagged).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _apply_threads(flag_value: Optional[int]) -> None:
    value = flag_value
    if value is None:
        env = os.environ.get("PEAKFORGE_THREADS")
        if env is None:
            return
        value = int(env)
    if value < 1:
        raise ValueError("thread count must be positive")
    for var in _THREAD_VARS:
        os.environ[var] = str(value)


def _add_common(sub: argparse.ArgumentParser, observations: bool = False) -> None:
    sub.add_argument("--config", required=True, type=Path,
                     help="path to a key=value experiment config")
    sub.add_argument("--out", required=True, type=Path,
                     help="output directory for artifacts")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config's observation seed")
    sub.add_argument("--threads", type=int, default=None,
                     help="BLAS/OpenMP thread cap (PEAKFORGE_THREADS as fallback)")
    sub.add_argument("--format", choices=("csv", "json"), default="csv",
                     dest="fmt", help="tabular artifact format")
    sub.add_argument("--no-figures", action="store_true",
                     help="skip rendering figures")
    if observations:
        sub.add_argument("--observations", type=Path, default=None,
                         help="directory with saved observation artifacts to reuse")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peakforge",
        description="Sparse peak deconvolution: simulate, solve, adapt, scan.")
    subs = parser.add_subparsers(dest="command", required=True)
    _add_common(subs.add_parser("simulate", help="sample the forward model"))
    _add_common(subs.add_parser("solve", help="single solve on a fixed mesh"),
                observations=True)
    _add_common(subs.add_parser("adapt", help="adaptive mesh refinement loop"),
                observations=True)
    _add_common(subs.add_parser("scan", help="diagnostic parameter sweeps"))
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_threads(args.threads)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    from peakforge import commands
    from peakforge.config import ExperimentConfig

    try:
        cfg = ExperimentConfig.from_file(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    figures = not args.no_figures
    try:
        if args.command == "simulate":
            return commands.cmd_simulate(cfg, args.out, seed=args.seed,
                                         fmt=args.fmt, figures=figures)
        if args.command == "solve":
            return commands.cmd_solve(cfg, args.out, seed=args.seed, fmt=args.fmt,
                                      figures=figures,
                                      observations_dir=args.observations)
        if args.command == "adapt":
            return commands.cmd_adapt(cfg, args.out, seed=args.seed, fmt=args.fmt,
                                      figures=figures,
                                      observations_dir=args.observations)
        return commands.cmd_scan(cfg, args.out, seed=args.seed, fmt=args.fmt,
                                 figures=figures)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
