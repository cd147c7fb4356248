"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 gradcheck bound
violation."""

import argparse
import sys

from .config import ConfigError, RunConfig, load_config
from .harness import cmd_eval, cmd_export_plots, cmd_gradcheck, cmd_train

GRADCHECK_BOUND = 1e-3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pegassembly",
                                     description="Peg-in-hole assembly RL stack")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a policy")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)

    p_eval = sub.add_parser("eval", help="evaluate a policy")
    p_eval.add_argument("--checkpoint", default=None)
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--mode", required=True, choices=["ft", "rt", "fnt"])
    p_eval.add_argument("--episodes", type=int, default=24)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--trace", action="store_true",
                        help="record per-substep wrench traces")

    sub.add_parser("gradcheck", help="finite-difference gradient check")

    p_export = sub.add_parser("export-plots", help="emit plot-ready CSV series")
    p_export.add_argument("--in", dest="in_dir", required=True)
    p_export.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            cfg = load_config(args.config)
            path = cmd_train(cfg, args.out)
            print(f"checkpoint written to {path}")
            return 0
        if args.command == "eval":
            cfg = load_config(args.config) if args.config else RunConfig()
            report = cmd_eval(cfg, args.mode, args.episodes, args.out,
                              checkpoint=args.checkpoint, record_trace=args.trace)
            for key, value in report.summary_rows():
                print(f"{key}: {value}")
            return 0
        if args.command == "gradcheck":
            worst = cmd_gradcheck()
            print(f"max relative gradient error: {worst:.3e} (bound {GRADCHECK_BOUND:.0e})")
            return 0 if worst < GRADCHECK_BOUND else 2
        if args.command == "export-plots":
            written = cmd_export_plots(args.in_dir, args.out)
            print(f"wrote {len(written)} series")
            return 0
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
