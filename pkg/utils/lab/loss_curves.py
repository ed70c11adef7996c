import click
import numpy as np
import pandas as pd

from core.common import ConfigError, write_csv
from core.losses import loss_curves
from core.special_methods import RespanCommand


@click.command("loss-curves", cls=RespanCommand)
@click.option("--h-min", type=float, default=-2.0, show_default=True)
@click.option("--h-max", type=float, default=2.0, show_default=True)
@click.option("--points", type=click.IntRange(min=2), default=401, show_default=True)
@click.option("--csv", "csv_path", type=str, default="-", show_default=True)
def loss_curves_cmd(h_min: float, h_max: float, points: int, csv_path: str):
    """Value and slope of l1, l2 and L_res over a grid of residuals."""
    if not h_min < h_max:
        raise ConfigError("cli", f"--h-min {h_min} must be below --h-max {h_max}")
    curves = loss_curves(np.linspace(h_min, h_max, points))
    write_csv(pd.DataFrame(curves, columns=["h", "l1", "l2", "res", "dl1", "dl2", "dres"]), csv_path)


def setup(cli: click.Group):
    cli.add_command(loss_curves_cmd)
