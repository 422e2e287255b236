"""Command-line front end.

    parapss solve --config run.ini [--mode pppc-up] [--windows 10]
                  [--fine-dtau 1e-4] [--coarse-dtau 0.1] [--tol 1e-3]
                  [--out results] [--workers 4]

Exit codes: 0 converged, 2 iteration budget exhausted, 3 solver failure,
4 configuration error.
"""

import argparse
import sys

from .config import read_config
from .errors import ConfigError, SolverError


def _parser():
    parser = argparse.ArgumentParser(
        prog="parapss",
        description="Periodic steady-state solvers: sequential time stepping, "
                    "multiple shooting, and periodic parareal with known or "
                    "unknown period.")
    sub = parser.add_subparsers(dest="command", required=True)
    solve = sub.add_parser("solve", help="run one configured experiment")
    solve.add_argument("--config", help="INI config file (defaults applied "
                                        "when omitted)")
    solve.add_argument("--problem", choices=("colpitts", "vanderpol"))
    solve.add_argument("--mode", choices=("sequential", "shooting", "pppc",
                                          "pppc-up"))
    solve.add_argument("--windows", type=int)
    solve.add_argument("--fine-dtau", dest="fine_dtau", type=float)
    solve.add_argument("--coarse-dtau", dest="coarse_dtau", type=float)
    solve.add_argument("--tol", dest="outer_tol", type=float)
    solve.add_argument("--max-iter", dest="outer_max_iter", type=int)
    solve.add_argument("--out", dest="out_dir")
    solve.add_argument("--workers", type=int)
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k != "command"}
    config_path = overrides.pop("config", None)
    try:
        config = read_config(config_path, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 4

    from .bench import run_experiment
    try:
        result = run_experiment(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 4
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        try:
            import os
            os.makedirs(config.out_dir, exist_ok=True)
            with open(f"{config.out_dir}/summary.txt", "w") as fh:
                fh.write(f"mode: {config.mode}\nerror: {exc}\n")
        except OSError:
            pass
        return 3
    print(result.summary, end="")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
