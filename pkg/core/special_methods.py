from __future__ import annotations

import platform
import subprocess
import sys
import traceback
from pathlib import Path
from typing import Any, Dict, Optional

import click
import numpy as np
import sentry_sdk
from pydantic import BaseModel

from core import database
from core.common import ConsoleColors, RespanError, resolve_threads
from core.logging_module import get_log

_log = get_log(__name__)


class RunConfig(BaseModel):
    """Everything a run resolved to before it started, defaults included."""

    command: str
    seed: int = 0
    threads: int = 1
    verbose: bool = False
    quiet: bool = False
    options: Dict[str, Any] = {}

    class Config:
        allow_mutation = False


def resolve_run_config(ctx: click.Context) -> RunConfig:
    root = ctx.find_root()
    group_params = root.params
    options = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(ctx.params.items())}
    return RunConfig(
        command=ctx.command.name,
        seed=ctx.params.get("seed") or 0,
        threads=resolve_threads(group_params.get("threads")),
        verbose=bool(group_params.get("verbose")),
        quiet=bool(group_params.get("quiet")),
        options=options,
    )


def before_invoke_(ctx: click.Context) -> Optional[database.RunAnalytics]:
    run_config = resolve_run_config(ctx)
    _log.info(f"{ConsoleColors.OKCYAN}Resolved config:{ConsoleColors.ENDC} {run_config.json(sort_keys=True)}")

    run = database.record_start(run_config.command, sys.argv[1:], run_config.seed, run_config.threads)

    sentry_sdk.set_tag("command", run_config.command)
    sentry_sdk.set_context(
        "run",
        {
            "command": run_config.command,
            "seed": run_config.seed,
            "threads": run_config.threads,
            "options": {k: str(v) for k, v in run_config.options.items()},
        },
    )
    return run


def on_ready_(verbose: bool = False) -> None:
    if not verbose:
        return
    try:
        p = subprocess.run(
            "git describe --always",
            shell=True,
            text=True,
            capture_output=True,
            check=True,
        )
        output = p.stdout.strip()
    except subprocess.CalledProcessError:
        output = "ERROR"

    if database.enabled():
        database_field = f"{ConsoleColors.OKGREEN}Run history: enabled{ConsoleColors.ENDC}"
    else:
        database_field = f"{ConsoleColors.WARNING}Run history: disabled (set RESPAN_DB){ConsoleColors.ENDC}"

    _log.debug(
        f"""
            {ConsoleColors.OKCYAN}Python {platform.python_version()} | numpy {np.__version__}{ConsoleColors.ENDC}
            {ConsoleColors.WARNING}Version: {output}{ConsoleColors.ENDC}
            {database_field}
            =================================================="""
    )


def on_command_error_(command: str, error: Exception) -> int:
    """Reports a failed run and returns its exit code."""
    if isinstance(error, RespanError):
        _log.error(f"[{error.module}] {error.detail}")
        return 1

    exception_msg = "".join(traceback.format_exception(type(error), error, error.__traceback__, chain=True))
    error_file = Path("error.txt")
    error_file.touch()
    with error_file.open("w") as f:
        f.write(exception_msg)
    _log.error(f"Unexpected error in {command}: {error!r} (traceback written to {error_file})")
    sentry_sdk.capture_exception(error)
    return 1


class RespanCommand(click.Command):
    """Subcommand that logs its resolved config and records itself in the run history."""

    def invoke(self, ctx: click.Context):
        run = before_invoke_(ctx)
        try:
            rv = super().invoke(ctx)
        except click.exceptions.Exit as e:
            database.record_finish(run, e.exit_code)
            raise
        except BaseException:
            database.record_finish(run, 1)
            raise
        database.record_finish(run, 0)
        return rv


class RespanGroup(click.Group):
    """Turns engine failures into exit code 1; click keeps exit code 2 for usage errors."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except (click.exceptions.ClickException, click.exceptions.Exit, click.exceptions.Abort):
            raise
        except Exception as error:
            ctx.exit(on_command_error_(ctx.invoked_subcommand or ctx.info_name or "respan", error))
