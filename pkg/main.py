#!/usr/bin/env python3
from __future__ import annotations

import argparse
import sys
import traceback
from typing import List, Optional

from src import TOOL_NAME, __version__
from src.cli.commands import COMMANDS, UsageError
from src.core.dataset import SHAPES
from src.utils.config_manager import ConfigError, ConfigManager
from src.utils.logger import APP_NAME, get_logger, setup_logger, update_log_levels, verbosity_level

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _common_options(with_defaults: bool = True) -> argparse.ArgumentParser:
    """Options accepted before and after the command name.

    The per-command copy leaves unset options out of the namespace so it does
    not overwrite values given before the command.
    """

    def default(value):
        return value if with_defaults else argparse.SUPPRESS

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=default(0), help="Random seed (default: 0)")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_true", default=default(False), help="Only log warnings and errors")
    verbosity.add_argument("--verbose", action="store_true", default=default(False), help="Log per-iteration details")
    common.add_argument("--config", default=default("config.json"), help="Presets file (default: config.json)")
    common.add_argument("--preset", default=default(None), help='Preset name, e.g. "Polar"')
    common.add_argument("--log-dir", default=default(None), help="Also write a rotating debug log into this directory")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=TOOL_NAME,
        description="Learn globally stable dynamical systems from demonstrations.",
        parents=[_common_options()],
    )
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {__version__}")
    common = _common_options(with_defaults=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="Write synthetic demonstrations")
    p.add_argument("--shape", choices=SHAPES, required=True)
    p.add_argument("-M", type=int, default=3, help="Number of demonstrations")
    p.add_argument("-N", type=int, default=500, help="Samples per demonstration")
    p.add_argument("--noise", type=float, default=0.5, help="Lateral noise std in metres")
    p.add_argument("--heading", action="store_true", help="Append the course heading column")
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("fit", parents=[common], help="Learn a stable model from a demonstration CSV")
    p.add_argument("input")
    p.add_argument("-K", type=int, default=None, help="Mixture components (default: 5 planar, 12 with heading)")
    p.add_argument("-L", type=int, default=None, help="Asymmetric energy terms")
    p.add_argument("--rho0", type=float, default=None)
    p.add_argument("--target-radius", type=float, default=None)
    p.add_argument("--threshold", type=float, default=None, help="Stop once J drops below this value")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--polar", action="store_true", help="Reduce (x, y, heading) to (radius, heading)")
    p.add_argument("--origin", default=None, help="lon,lat origin: input positions are degrees")
    p.add_argument("--no-normalize", action="store_true", help="Learn in raw state units")
    p.add_argument("--dataset-json", default=None, help="Also write the preprocessed dataset as JSON")
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("rollout", parents=[common], help="Integrate the learned closed loop")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("--x0", default=None, help="Start state, comma separated")
    p.add_argument("--from-demo-starts", action="store_true")
    p.add_argument("--random-starts", type=int, default=0, metavar="COUNT")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--disturbance", default="none", help="none | drift:vx,vy | localized:t0,dur,vx,vy | engine-off:t0,dur,vx,vy [+noise:std]")
    p.add_argument("--no-control", action="store_true", help="Integrate the bare regression field")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("eval", parents=[common], help="Score reproductions of a dataset")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("input")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--resolution", type=int, default=None, help="SEA pairing resolution")
    p.add_argument("--xlsx", default=None, help="Also write the table as an Excel workbook")
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("field", parents=[common], help="Export the energy and velocity grid")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("--bounds", required=True, help="lo1,hi1,lo2,hi2[,...]")
    p.add_argument("--resolution", default="50", help="N or NxM")
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("bench", parents=[common], help="Time objective evaluations and fits")
    p.add_argument("--K", default="5,12")
    p.add_argument("--N", default="250,500")
    p.add_argument("--d", default="2")
    p.add_argument("-M", type=int, default=3)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--iters", type=int, default=2, help="Optimizer iterations per timed fit")
    p.add_argument("--evals", type=int, default=5, help="Objective evaluations per timing")
    p.add_argument("-o", "--out", default=None)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE

    console_level = verbosity_level(args.verbose, args.quiet)
    if args.log_dir:
        setup_logger(APP_NAME, console_level=console_level, log_dir=args.log_dir)
    else:
        get_logger()
        update_log_levels(console_level=console_level)
    logger = get_logger()
    logger.debug(f"Starting {TOOL_NAME} {__version__}: {args.command}")

    try:
        config_manager = ConfigManager(args.config, preset=args.preset)
        return COMMANDS[args.command](args, config_manager)
    except (UsageError, ConfigError) as e:
        parser.print_usage(sys.stderr)
        print(f"{TOOL_NAME}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logger.error(f"{args.command} failed: {str(e)}")
        logger.debug(f"Traceback: {traceback.format_exception(type(e), e, e.__traceback__)}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
