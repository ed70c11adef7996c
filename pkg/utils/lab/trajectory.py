import click

from core.common import schedule_options, seed_option
from core.logging_module import get_log
from core.schedule import build_schedule, schedule_config
from core.special_methods import RespanCommand
from core.tensor_io import SeededGaussian
from core.trajectory import PAIRINGS, ToyTask, roll_trajectories, toy_config, toy_oracle, train_toy, write_report

_log = get_log(__name__)


@click.command("trajectory", cls=RespanCommand)
@click.option("--pairing", type=click.Choice(sorted(PAIRINGS)), default="shift", show_default=True)
@click.option("--n", "count", type=click.IntRange(min=1), default=50, show_default=True, help="Trajectories to roll.")
@click.option("--samples", type=int, default=2000, show_default=True, help="Training pairs.")
@click.option("--train-steps", type=int, default=1500, show_default=True)
@click.option("--hidden", type=int, default=64, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--oracle", is_flag=True, help="Use the exact residual instead of a trained predictor.")
@click.option("--deterministic", is_flag=True, help="Zero the initial noise and the posterior noise.")
@schedule_options(kappa=0.1)
@seed_option
@click.option("--out-prefix", default="runs/traj", show_default=True, help="Writes <prefix>.csv and <prefix>.svg.")
def trajectory_cmd(
    pairing: str,
    count: int,
    samples: int,
    train_steps: int,
    hidden: int,
    lr: float,
    oracle: bool,
    deterministic: bool,
    steps: int,
    p: float,
    kappa: float,
    seed: int,
    out_prefix: str,
):
    """Rolls the residual chain between paired 2D clouds and reports path straightness."""
    schedule = schedule_config(T=steps, p=p, kappa=kappa)
    cfg = toy_config(pairing=pairing, samples=samples, hidden=hidden, steps=train_steps, lr=lr, seed=seed, schedule=schedule)
    task = ToyTask(pairing, samples, seed)
    tab = build_schedule(schedule)

    if oracle:
        predictor = toy_oracle(task)
    else:
        predictor = train_toy(task, cfg).predictor

    trajs = roll_trajectories(predictor, task, count, tab, SeededGaussian(seed).child(2), deterministic=deterministic)
    report = write_report(trajs, out_prefix, title=f"{pairing}, T={tab.T}")
    click.echo(
        f"{len(trajs)} trajectories, mean path/chord {report.mean_ratio:.4f}, "
        f"{report.intersections} crossings -> {out_prefix}.csv, {out_prefix}.svg"
    )


def setup(cli: click.Group):
    cli.add_command(trajectory_cmd)
