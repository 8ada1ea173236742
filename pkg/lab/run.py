#!/usr/bin/env python3
"""
Entry script for the MER lab command line.

    python lab/run.py <command> [flags]

Exit codes: 0 success, 1 contract or usage error, 2 numeric or degenerate error.
"""
import argparse
import logging
import os
import sys

# Add the current directory to the Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import app
from mer_lab.models.schema import MerConfig
from mer_lab.utils.feature_io import dump_yaml
from mer_lab.utils.validators import LabError, UsageError

logger = logging.getLogger("mer_lab")


class LabArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors raised as UsageError instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = LabArgumentParser(prog="mer-lab", description="Feature-entropy regularization lab")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="warnings and errors only")
    commands = parser.add_subparsers(dest="command", parser_class=LabArgumentParser)
    commands.required = True
    defaults = MerConfig()

    p = commands.add_parser("grad-check", help="finite-difference check of the MER gradients")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--step", type=float, default=1e-5)
    p.set_defaults(handler=app.cmd_grad_check)

    p = commands.add_parser("losses", help="MER loss breakdown of a feature file")
    p.add_argument("--input", required=True)
    p.add_argument("--gamma", type=float, default=defaults.gamma)
    p.add_argument("--eps", type=float, default=defaults.eps)
    p.add_argument("--alpha-marg", type=float, default=defaults.alpha_marg)
    p.add_argument("--alpha-spec", type=float, default=defaults.alpha_spec)
    p.set_defaults(handler=app.cmd_losses)

    p = commands.add_parser("decompose", help="log-det entropy split into marginal and spectral terms")
    p.add_argument("--input", required=True)
    p.add_argument("--eps", type=float, default=defaults.eps)
    p.set_defaults(handler=app.cmd_decompose)

    p = commands.add_parser("diagnose", help="rankme and alignment metrics of feature files")
    p.add_argument("--a", required=True)
    p.add_argument("--b")
    p.add_argument("--labels-a")
    p.add_argument("--labels-b")
    p.add_argument("--metrics", default="rankme")
    p.add_argument("--class-conditional", action="store_true", help="require labels; implied when both are given")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=app.cmd_diagnose)

    p = commands.add_parser("spectrum", help="log-normalized singular values as CSV")
    p.add_argument("--input", required=True)
    p.set_defaults(handler=app.cmd_spectrum)

    p = commands.add_parser("synth", help="generate and serialize a synthetic bundle")
    p.add_argument("--config")
    p.set_defaults(handler=app.cmd_synth)

    def training_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--data", required=True)
        p.add_argument("--config")
        p.add_argument("--mer", action="store_true", help="enable the MER term")
        p.add_argument("--baseline-reg", help="name or name=value, e.g. dropout=0.2")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)

    p = commands.add_parser("train", help="train one run and write its run record")
    training_flags(p)
    p.set_defaults(handler=app.cmd_train)

    p = commands.add_parser("sweep", help="one run per hyperparameter value")
    training_flags(p)
    p.add_argument("--param", required=True, choices=app.SWEEP_PARAMS)
    p.add_argument("--values", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seeds", type=int, default=1, help="training seeds averaged per row")
    p.set_defaults(handler=app.cmd_sweep)

    p = commands.add_parser("compare", help="MER against standard regularizers and its own components")
    training_flags(p)
    p.add_argument("--methods", help="comma-separated subset of the comparison rows")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seeds", type=int, default=1, help="training seeds averaged per row")
    p.set_defaults(handler=app.cmd_compare)

    p = commands.add_parser("bench", help="wall-clock cost of MER against the toy network")
    p.add_argument("--n", type=int, default=48)
    p.add_argument("--d-list", default="64,128,256,512")
    p.add_argument("--reps", type=int, default=app.BENCH_REPS)
    p.set_defaults(handler=app.cmd_bench)

    p = commands.add_parser("robustness", help="target accuracy under encoder-output corruptions")
    p.add_argument("--run", required=True)
    p.add_argument("--corruptions", help="e.g. noise:video:0.5,drop:audio (default: full grid)")
    p.set_defaults(handler=app.cmd_robustness)

    for name, sub in commands.choices.items():
        # train and synth write directories; the rest write one file or stdout
        sub.add_argument("--out", required=name in ("train", "synth"))
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        configure_logging()
        logger.error("✗ %s", e.message)
        return e.exit_code
    configure_logging(args.verbose, args.quiet)
    try:
        return args.handler(args)
    except LabError as e:
        logger.error("✗ %s", e.message)
        sys.stderr.write(dump_yaml(e.to_dict()))
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
