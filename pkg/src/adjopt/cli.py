"""``adjopt`` command line.

Exit codes: 0 success, 2 configuration error, 3 solver or optimiser
failure, 4 failed verification.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .checkpointing import PlanError, plan_multistage
from .config import PROBLEMS, ConfigError, default_config, load_config
from .drivers import VerificationError, run, run_taylor, write_outputs
from .fem import SolverError
from .optimize import OptimizationError

EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 2, 3, 4

SUBCOMMANDS = {
    "heat-control": "heat-control",
    "mms-smooth": "mms-smooth",
    "mms-bangbang": "mms-bangbang",
    "transient": "transient-control",
    "mpec": "mpec",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adjopt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, problem in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run the {problem} problem")
        p.add_argument("--config", help="key = value file; defaults apply when omitted")
        p.add_argument("--out", default=f"adjopt-{name}", help="output directory")
        p.add_argument("--verify", action="store_true",
                       help="Taylor test at the final iterate")
    p = sub.add_parser("taylor", help="Taylor remainder test at a problem's initial iterate")
    p.add_argument("--problem", choices=PROBLEMS, required=True)
    p.add_argument("--config")
    p = sub.add_parser("checkplan", help="print a multistage checkpoint plan")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--ram", type=int, default=3)
    p.add_argument("--disk", type=int, default=0)
    p.add_argument("--disk-weight", type=float, default=3.0)
    return parser


def _config(problem, path):
    return load_config(path, problem) if path else default_config(problem)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "checkplan":
            print(plan_multistage(args.steps, args.ram, args.disk, args.disk_weight))
            return 0
        if args.command == "taylor":
            res, ok = run_taylor(_config(args.problem, args.config))
            print(res)
            print("PASS" if ok else "FAIL")
            return 0 if ok else EXIT_VERIFY
        cfg = _config(SUBCOMMANDS[args.command], args.config)
    except (ConfigError, PlanError) as exc:
        print(f"adjopt: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, OptimizationError) as exc:
        print(f"adjopt: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    try:
        result = run(cfg, verify=args.verify)
    except (SolverError, OptimizationError) as exc:
        print(f"adjopt: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except VerificationError as exc:
        print(f"adjopt: verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    write_outputs(result, args.out)
    sys.stdout.write(result.report())
    if result.error:
        print(f"adjopt: solver failure: {result.error}", file=sys.stderr)
        return EXIT_SOLVER
    return 0


if __name__ == "__main__":
    sys.exit(main())
