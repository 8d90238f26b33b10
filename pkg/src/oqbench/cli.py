"""Command-line entry points for runs, reports, and validation suites."""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from .config import ConfigError, ExperimentConfig
from .runner import noise_check, report, run, selftest

WORKERS_ENV = "OQBENCH_WORKERS"


def _workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="oqbench",
        description="Benchmark weak-coupling master equations against a "
                    "stochastically exact reference for 1-2 qubit systems.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configuration (sweeps resume "
                                       "from per-cell artifacts)")
    p_run.add_argument("config", help="path to a JSON experiment config")
    p_run.add_argument("--workers", type=int, default=None,
                       help=f"trajectory worker processes (or ${WORKERS_ENV})")

    p_rep = sub.add_parser("report", help="aggregate a finished sweep directory")
    p_rep.add_argument("directory", help="output directory of a previous run")

    p_noise = sub.add_parser("noise-check",
                             help="validate colored-noise statistics for a config")
    p_noise.add_argument("config", help="path to a JSON experiment config")
    p_noise.add_argument("--trajectories", type=int, default=2000)

    sub.add_parser("selftest", help="run the fast invariant suite")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = ExperimentConfig.from_file(args.config)
            return run(config, n_workers=_workers(args))
        if args.command == "report":
            return report(args.directory)
        if args.command == "noise-check":
            config = ExperimentConfig.from_file(args.config)
            return noise_check(config, n_traj=args.trajectories)
        if args.command == "selftest":
            return selftest()
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
