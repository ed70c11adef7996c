from __future__ import annotations

import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, List, Optional, Sequence, TypeVar, Union

import click
import pandas as pd
from dotenv import load_dotenv
from pydantic import ValidationError
from tabulate import tabulate

from core.logging_module import get_log

load_dotenv()

# Module Variables
T = TypeVar("T")
R = TypeVar("R")
PathLike = Union[str, Path]
_log = get_log(__name__)


def get_extensions():
    extensions = []
    if sys.platform == "win32" or sys.platform == "cygwin":
        dirpath = "\\"
    else:
        dirpath = "/"

    root = Path(__file__).resolve().parent.parent
    for file in sorted((root / "utils").glob("**/*.py")):
        if "!" in file.name or "DEV" in file.name or file.name.startswith("__"):
            continue
        rel = file.relative_to(root)
        extensions.append(str(rel).replace(dirpath, ".").replace(".py", ""))
    return extensions


class ConsoleColors:
    HEADER = "\033[95m"
    OKBLUE = "\033[94m"
    OKCYAN = "\033[96m"
    OKGREEN = "\033[92m"
    WARNING = "\033[93m"
    FAIL = "\033[91m"
    ENDC = "\033[0m"
    BOLD = "\033[1m"
    UNDERLINE = "\033[4m"


class RespanError(Exception):
    """Base error; ``module`` names the part of the engine that raised it."""

    pre = "Error"

    def __init__(self, module: str, message: str) -> None:
        self.module = module
        self.detail = message
        self.message = f"{self.pre}: {message}\n  -> Module: {module}."
        super().__init__(self.message)


class FormatError(RespanError):
    pre = "Format Error"

    def __init__(self, module: str, message: str, offset: int) -> None:
        self.offset = offset
        super().__init__(module, f"{message} (at byte offset {offset})")


class ConfigError(RespanError):
    pre = "Config Error"


class ArgumentError(RespanError):
    pre = "Invalid Argument"


class ShapeError(RespanError):
    pre = "Shape Mismatch"


class StepRangeError(RespanError):
    pre = "Step Out Of Range"


class MetricError(RespanError):
    pre = "Metric Error"


class DatasetError(RespanError):
    pre = "Dataset Error"


class CacheError(RespanError):
    pre = "Stale Cache"


class TrainingDivergence(RespanError):
    pre = "Training Diverged"

    def __init__(self, module: str, message: str, epoch: int, step: int, t: int) -> None:
        self.epoch = epoch
        self.step = step
        self.t = t
        super().__init__(module, f"{message} [epoch={epoch} step={step} t={t}]")


def validated(model_cls, module: str, **kwargs):
    """Builds a pydantic config model, translating validation failures to ConfigError."""
    try:
        return model_cls(**kwargs)
    except ValidationError as e:
        raise ConfigError(module, str(e).replace("\n", " ")) from e


def resolve_threads(threads: Optional[int]) -> int:
    """``--threads`` wins, then ``RESPAN_THREADS``, then 1."""
    if threads is None:
        env = os.getenv("RESPAN_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ConfigError("cli", f"--threads must be >= 1, got {threads}")
    return threads


def map_in_threads(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> List[R]:
    """Maps ``fn`` over ``items`` preserving order. Results never depend on ``threads``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def write_csv(frame: pd.DataFrame, path: PathLike) -> None:
    """Writes ``frame`` without an index; ``"-"`` streams to stdout."""
    if str(path) == "-":
        frame.to_csv(sys.stdout, index=False, lineterminator="\n")
        sys.stdout.flush()
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    _log.debug(f"Wrote {len(frame)} rows to {path}")


def echo_table(rows: List[List[Any]], headers: List[str]) -> str:
    return tabulate(rows, headers=headers, tablefmt="github")


def parse_list(raw: str, cast: Callable[[str], T] = str) -> List[T]:
    """``"0,1,2"`` -> [0, 1, 2]; blanks are dropped."""
    try:
        return [cast(part.strip()) for part in raw.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError("cli", f"cannot parse {raw!r}: {e}") from e


def seed_option(fn):
    return click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True, help="Master seed.")(fn)


def schedule_options(kappa: float = 1.0, multi_p: bool = False):
    """--T, --p and --kappa for commands that build a ScheduleTable."""

    def wrap(fn):
        fn = click.option("--kappa", type=float, default=kappa, show_default=True, help="Noise scale.")(fn)
        if multi_p:
            fn = click.option(
                "--p", "p", type=float, multiple=True, default=(8e-3,), show_default=True, help="Cosine offset; repeatable."
            )(fn)
        else:
            fn = click.option("--p", "p", type=float, default=8e-3, show_default=True, help="Cosine offset.")(fn)
        fn = click.option("--T", "steps", type=int, default=15, show_default=True, help="Chain length.")(fn)
        return fn

    return wrap
