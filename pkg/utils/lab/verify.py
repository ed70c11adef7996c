from typing import Tuple

import click

from core.checks import registered, run_all
from core.common import ConfigError, echo_table, seed_option
from core.logging_module import get_log
from core.special_methods import RespanCommand

_log = get_log(__name__)


@click.command("verify", cls=RespanCommand)
@seed_option
@click.option("--only", multiple=True, help="Run only the named check (repeatable).")
@click.option("--list", "list_only", is_flag=True, help="List check names and exit.")
@click.pass_context
def verify(ctx: click.Context, seed: int, only: Tuple[str, ...], list_only: bool):
    """Runs every numerical invariant check and prints a pass/fail table."""
    if list_only:
        for name in registered():
            click.echo(name)
        return
    unknown = [name for name in only if name not in registered()]
    if unknown:
        raise ConfigError("cli", f"unknown checks {unknown}; see verify --list")

    results = run_all(seed, only=list(only) or None)
    click.echo(echo_table([[r.name, r.status, r.detail] for r in results], ["check", "status", "detail"]))
    failed = [r.name for r in results if not r.passed]
    if failed:
        _log.error(f"{len(failed)} of {len(results)} checks failed: {', '.join(failed)}")
        ctx.exit(1)


def setup(cli: click.Group):
    cli.add_command(verify)
