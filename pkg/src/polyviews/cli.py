"""Command line interface: ``polyviews run`` or one stage at a time."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from typing import Any

from .config import build_config
from .errors import PolyviewsError
from .pipeline import STAGES, run_pipeline, run_stage

logger = logging.getLogger(__name__)

_STAGE_HELP = {
    "fit": "Normalize the corpus and fit segmented regressions",
    "features": "Gate fits by RMSE and extract segment features",
    "cluster": "Cluster each segment-count group",
    "model": "Fit the generative models",
    "score": "Score the generative models against the real features",
}


def _common_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--input", help="Corpus file (CSV or JSON)")
    parent.add_argument("--format", choices=("csv", "json"), help="Corpus format")
    parent.add_argument("--config", help="TOML file whose values override the flags")
    parent.add_argument("--out", help="Output directory (default: polyviews-out)")
    parent.add_argument("--seed", type=int, help="Master seed (default: 0)")
    parent.add_argument(
        "--rmse-threshold", type=float, help="RMSE gate threshold (default: 0.01)"
    )
    parent.add_argument(
        "--max-breakpoints",
        type=int,
        help="Largest breakpoint count tried (default: 4)",
    )
    parent.add_argument("--k", type=int, help="Clusters per segment count (default: 3)")
    parent.add_argument(
        "--bins-univariate",
        type=int,
        help="Bins of the univariate Markov tables (default: 10)",
    )
    parent.add_argument(
        "--bins-alpha",
        type=int,
        help="Angle bins of the multivariate tables (default: 8)",
    )
    parent.add_argument(
        "--bins-l", type=int, help="Length bins of the multivariate tables (default: 8)"
    )
    parent.add_argument(
        "--samples", type=int, help="Samples drawn per model (default: 100000)"
    )
    parent.add_argument("--grid", help="Adherence histogram grid, e.g. 20 or 20x30")
    parent.add_argument(
        "--control",
        action="store_true",
        default=None,
        help="Also process a control corpus of uniform random views",
    )
    parent.add_argument(
        "--h-max", type=int, help="Exclusive upper bound of the control monthly views"
    )
    parent.add_argument(
        "--check-oracle",
        action="store_true",
        default=None,
        help="Compare single-breakpoint fits with an exhaustive search",
    )
    parent.add_argument("--workers", type=int, help="Models scored in parallel")
    parent.add_argument(
        "-v", "--verbose", action="count", default=0, help="More output (repeatable)"
    )
    parent.add_argument("-q", "--quiet", action="store_true", help="Only errors")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = _common_options()
    parser = argparse.ArgumentParser(
        prog="polyviews",
        description="Polygonal analysis of cumulative view profiles.",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.add_parser("run", parents=[parent], help="Run every stage in order")
    for stage in STAGES:
        subparsers.add_parser(stage, parents=[parent], help=_STAGE_HELP[stage])
    return parser


def _configure_logging(verbose: int, quiet: bool) -> None:
    if quiet:
        level = logging.ERROR
    elif verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {
        "input": args.input,
        "format": args.format,
        "out": args.out,
        "seed": args.seed,
        "rmse_threshold": args.rmse_threshold,
        "max_breakpoints": args.max_breakpoints,
        "k": args.k,
        "bins_univariate": args.bins_univariate,
        "bins_alpha": args.bins_alpha,
        "bins_l": args.bins_l,
        "samples": args.samples,
        "grid": args.grid,
        "control": args.control,
        "h_max": args.h_max,
        "check_oracle": args.check_oracle,
        "workers": args.workers,
    }


def main(argv: Sequence[str] | None = None) -> int:
    """
    Entry point of the ``polyviews`` command.

    :return: 0 on success, 1 when the pipeline fails, 2 on usage errors
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    _configure_logging(args.verbose, args.quiet)
    try:
        config = build_config(_overrides(args), args.config)
        if args.command == "run":
            out = run_pipeline(config)
        else:
            out = run_stage(config, args.command)
    except PolyviewsError as e:
        print(f"polyviews: error: {e}", file=sys.stderr)
        return 1
    logger.info("Artifacts written to '%s'", out)
    return 0
