import os
from datetime import datetime
from typing import List, Optional

from dotenv import load_dotenv
from peewee import (
    AutoField,
    BigIntegerField,
    DatabaseProxy,
    DateTimeField,
    IntegerField,
    Model,
    SqliteDatabase,
    TextField,
)

from core.logging_module import get_log

load_dotenv()
_log = get_log(__name__)

"""
Run history lives in a SQLite file named by RESPAN_DB. Without it the proxy stays
uninitialised and nothing is recorded.
"""

db = DatabaseProxy()


def init_database(path: Optional[str] = None) -> bool:
    """Binds the proxy to ``path`` (or RESPAN_DB). Returns False when history is disabled."""
    path = path if path is not None else os.getenv("RESPAN_DB")
    if not path:
        db.initialize(None)
        return False
    db.initialize(SqliteDatabase(path))
    iter_table(tables)
    _log.debug(f"Run history database: {path}")
    return True


def enabled() -> bool:
    return db.obj is not None


def iter_table(model_dict: dict):
    """Iterates through a dictionary of tables, confirming they exist and creating them if necessary."""
    for key in model_dict:
        db.connect(reuse_if_open=True)
        if not db.table_exists(model_dict[key]._meta.table_name):
            db.create_tables([model_dict[key]])
        db.close()


"""
DATABASE FILES

This file represents every database table and the model they follow.
When fetching information from the tables, consult the typehints for possible methods!
"""


class BaseModel(Model):
    """Base Model class used for creating new tables."""

    class Meta:
        database = db


class RunAnalytics(BaseModel):
    """
    #RunAnalytics
    One row per CLI invocation.

    `id`: AutoField()
    Database Entry ID

    `command`: TextField()
    The subcommand that was run.

    `argv`: TextField()
    The arguments, space-joined.

    `seed`: BigIntegerField()
    The resolved seed (0 when the command takes none).

    `threads`: IntegerField()
    The resolved worker count.

    `started_at` / `finished_at`: DateTimeField()
    Wall-clock bounds of the run; finished_at is NULL while running or after a crash.

    `exit_code`: IntegerField()
    0 on success, 1 on a runtime failure.
    """

    id = AutoField()
    command = TextField()
    argv = TextField(default="")
    seed = BigIntegerField(default=0)
    threads = IntegerField(default=1)
    started_at = DateTimeField()
    finished_at = DateTimeField(null=True)
    exit_code = IntegerField(null=True)


def record_start(command: str, argv: List[str], seed: int, threads: int) -> Optional[RunAnalytics]:
    if not enabled():
        return None
    with db.connection_context():
        return RunAnalytics.create(
            command=command,
            argv=" ".join(argv),
            seed=seed,
            threads=threads,
            started_at=datetime.now(),
        )


def record_finish(run: Optional[RunAnalytics], exit_code: int) -> None:
    if run is None or not enabled():
        return
    with db.connection_context():
        run.finished_at = datetime.now()
        run.exit_code = exit_code
        run.save()


def recent_runs(limit: int = 20) -> List[RunAnalytics]:
    if not enabled():
        return []
    with db.connection_context():
        return list(RunAnalytics.select().order_by(RunAnalytics.id.desc()).limit(limit))


tables = {
    "RunAnalytics": RunAnalytics,
}
