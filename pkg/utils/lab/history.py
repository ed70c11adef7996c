import click

from core import database
from core.common import echo_table
from core.logging_module import get_log

_log = get_log(__name__)


@click.command("history")
@click.option("--limit", type=click.IntRange(min=1), default=20, show_default=True)
def history(limit: int):
    """Shows the most recent runs recorded in RESPAN_DB."""
    if not database.enabled():
        _log.warning("Run history is disabled; set RESPAN_DB to a SQLite path to record runs.")
        return
    rows = [
        [r.id, r.command, r.seed, r.threads, r.started_at, r.finished_at or "-", "-" if r.exit_code is None else r.exit_code, r.argv]
        for r in database.recent_runs(limit)
    ]
    click.echo(echo_table(rows, ["id", "command", "seed", "threads", "started", "finished", "exit", "argv"]))


def setup(cli: click.Group):
    cli.add_command(history)
