"""Command-line entry point."""
import argparse
import sys
from typing import List, Optional

from spaars import __version__
from spaars.commands import (
    cvae_commands,
    data_commands,
    eval_commands,
    export_commands,
    train_commands,
    verify_commands,
)
from spaars.utils.errors import SpaarsError
from spaars.utils.logger import log_error

COMMANDS = (data_commands, cvae_commands, train_commands, verify_commands, eval_commands, export_commands)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spaars",
        description="Latent-to-raw curriculum reinforcement learning on toy control tasks",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and map failures to exit codes."""
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except SpaarsError as e:
        return e.exit_code
    except Exception as e:
        log_error("Unexpected failure", command=args.command, error=repr(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
