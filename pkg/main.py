"""
Residual diffusion pansharpening engine: one executable, auto-discovered subcommands.

    python main.py [-v] [--threads N] [--quiet] <command> [options]
"""

__project__ = "respan"

import faulthandler
import importlib
import logging
import os
import sys
from typing import List, Optional

import click
import sentry_sdk
from dotenv import load_dotenv
from sentry_sdk.integrations.logging import LoggingIntegration

from core import database
from core.common import get_extensions, resolve_threads
from core.logging_module import get_log, set_level
from core.special_methods import RespanGroup, on_ready_

load_dotenv()
faulthandler.enable()

_log = get_log(__name__)


class RespanState:
    """Group-level options shared with every subcommand through ``ctx.obj``."""

    def __init__(self, threads: int, quiet: bool, verbose: bool) -> None:
        self.threads = threads
        self.quiet = quiet
        self.verbose = verbose


@click.group(cls=RespanGroup, invoke_without_command=True, context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.option("--threads", type=int, default=None, envvar="RESPAN_THREADS", show_envvar=True, help="Worker threads.")
@click.option("--quiet", is_flag=True, help="Hide progress bars.")
@click.pass_context
def cli(ctx: click.Context, verbose: bool, threads: Optional[int], quiet: bool):
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_usage(), err=True)
        ctx.exit(2)
    if verbose:
        set_level(logging.DEBUG)
    database.init_database()
    on_ready_(verbose)
    ctx.obj = RespanState(threads=resolve_threads(threads), quiet=quiet, verbose=verbose)


def load_extensions(group: click.Group) -> None:
    for ext in get_extensions():
        module = importlib.import_module(ext)
        setup = getattr(module, "setup", None)
        if setup is None:
            _log.warning(f"Extension {ext} has no setup(cli); skipped")
            continue
        setup(group)


load_extensions(cli)


if os.getenv("RESPAN_SENTRY_DSN") is not None:
    sentry_logging = LoggingIntegration(
        level=logging.INFO,  # Capture info and above as breadcrumbs
        event_level=logging.ERROR,  # Send errors as events
    )
    sentry_sdk.init(
        dsn=os.getenv("RESPAN_SENTRY_DSN"),
        traces_sample_rate=1.0,
        integrations=[sentry_logging],
    )


def run(argv: Optional[List[str]] = None) -> int:
    """Runs the CLI on ``argv`` and returns its exit code instead of exiting."""
    try:
        rv = cli.main(args=argv, prog_name="respan", standalone_mode=False)
    except click.exceptions.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        return 1
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(run())
