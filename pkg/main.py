#!/usr/bin/env python3
"""
Main entry point for the p-Laplacian continuation lab.
Builds the command-line parser from the command modules and dispatches one command.
"""
import argparse
import importlib
import logging
import sys
from typing import List, Optional

from config import LAB_NAME, LAB_VERSION
from utils.errors import LabError
from utils.logger import setup_logger

logger = logging.getLogger(__name__)

# Command modules to load, each exposing setup(subparsers)
COMMAND_MODULES = [
    "commands.analysis_commands",
    "commands.solver_commands",
    "commands.reproduce_commands",
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=LAB_NAME, description="p-Laplacian continuation lab")
    parser.add_argument("--version", action="version", version=f"{LAB_NAME} {LAB_VERSION}")
    parser.add_argument("--verbose", action="store_true", help="Log solver iterations")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMAND_MODULES:
        module = importlib.import_module(name)
        module.setup(subparsers)
        logger.debug(f"Loaded command module: {name}")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command and return its exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logger(level=logging.DEBUG if args.verbose else logging.INFO)

    try:
        return args.handler(args)
    except LabError as e:
        logger.error(f"{args.command} failed [{e.code}]: {e}")
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected error in {args.command}: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
