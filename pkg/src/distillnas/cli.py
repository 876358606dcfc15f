"""argparse front end for the experiment harness.

Import of the numeric stack is deferred until after --threads is applied,
so BLAS thread-count env vars take effect before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys

_COMMANDS = ("gen-data", "train-teacher", "search", "select-retrain", "ablation", "gradcheck")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distillnas",
        description="oracle-distillation NAS experiments: data, teachers, search, "
        "selection, ablation, gradient checks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file (defaults otherwise)")
        p.add_argument("--seed", type=int, default=None, help="override the root seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread count")
        if name == "gradcheck":
            p.add_argument(
                "--corrupt",
                default=None,
                help="inject a wrong adjoint into the named case (failure-path fixture)",
            )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("--threads must be >= 1", file=sys.stderr)
            return 2
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
            "VECLIB_MAXIMUM_THREADS",
        ):
            os.environ[var] = str(args.threads)

    from . import harness
    from .config import ConfigError, load_config
    from .data import DatasetError

    try:
        if args.command == "gradcheck":
            _, ok = harness.cmd_gradcheck(corrupt=args.corrupt, log=print)
            return 0 if ok else 1
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out_dir"] = args.out
        cfg = load_config(args.config, overrides)
        dispatch = {
            "gen-data": harness.cmd_gen_data,
            "train-teacher": harness.cmd_train_teacher,
            "search": harness.cmd_search,
            "select-retrain": harness.cmd_select_retrain,
            "ablation": harness.cmd_ablation,
        }
        dispatch[args.command](cfg, log=print)
        return 0
    except (ConfigError, DatasetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
