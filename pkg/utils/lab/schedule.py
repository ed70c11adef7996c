from typing import Tuple

import click
import pandas as pd

from core.common import schedule_options, write_csv
from core.logging_module import get_log
from core.schedule import build_schedule, marginal_params, schedule_config
from core.special_methods import RespanCommand

_log = get_log(__name__)

SCHEDULE_COLUMNS = ["t", "alpha", "alpha_bar", "marginal_coeff", "marginal_std"]


def schedule_frame(steps: int, p: float, kappa: float) -> pd.DataFrame:
    tab = build_schedule(schedule_config(T=steps, p=p, kappa=kappa))
    rows = []
    for t in range(tab.T + 1):
        coeff, std = marginal_params(tab, t)
        rows.append([t, float(tab.alpha[t]), float(tab.alpha_bar[t]), coeff, std])
    return pd.DataFrame(rows, columns=SCHEDULE_COLUMNS)


@click.command("schedule", cls=RespanCommand)
@schedule_options(multi_p=True)
@click.option("--csv", "csv_path", type=str, default="-", show_default=True)
def schedule_cmd(steps: int, p: Tuple[float, ...], kappa: float, csv_path: str):
    """Tabulates alpha, alpha_bar and the marginal coefficients for t = 0..T."""
    if len(p) == 1:
        write_csv(schedule_frame(steps, p[0], kappa), csv_path)
        return
    frames = [schedule_frame(steps, value, kappa).assign(p=value) for value in p]
    sweep = pd.concat(frames, ignore_index=True)
    write_csv(sweep[["p"] + SCHEDULE_COLUMNS], csv_path)


def setup(cli: click.Group):
    cli.add_command(schedule_cmd)
