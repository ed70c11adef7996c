from pathlib import Path
from typing import Optional

import click

from core.common import echo_table, schedule_options, seed_option
from core.losses import DEFAULT_GAMMA
from core.logging_module import get_log
from core.schedule import schedule_config
from core.special_methods import RespanCommand
from core.trainer import train, train_config

_log = get_log(__name__)


def model_options(fn):
    """Architecture and optimiser flags shared by ``train`` and ``ablate``."""
    fn = click.option("--val-count", type=int, default=8, show_default=True, help="Validation scenes.")(fn)
    fn = click.option("--accum", type=int, default=1, show_default=True, help="Images per AdamW step.")(fn)
    fn = click.option("--ema-decay", type=float, default=0.999, show_default=True, help="Weight average used for validation and the checkpoint.")(fn)
    fn = click.option("--clip-norm", type=float, default=1.0, show_default=True, help="Global gradient norm cap; 0 disables.")(fn)
    fn = click.option("--warmup", type=int, default=200, show_default=True, help="Linear learning-rate warmup, in optimizer steps.")(fn)
    fn = click.option("--emb-dim", type=int, default=32, show_default=True)(fn)
    fn = click.option("--blocks", type=int, default=3, show_default=True)(fn)
    fn = click.option("--hidden", type=int, default=32, show_default=True)(fn)
    fn = click.option("--per-band-penalty", is_flag=True, help="Per-band min/max in the boundary penalty.")(fn)
    fn = click.option("--gamma", type=float, default=DEFAULT_GAMMA, show_default=True, help="Boundary penalty weight.")(fn)
    fn = click.option("--weight-decay", type=float, default=1e-4, show_default=True)(fn)
    fn = click.option("--lr", type=float, default=1e-4, show_default=True)(fn)
    fn = click.option("--epochs", type=int, default=200, show_default=True)(fn)
    return fn


@click.command("train", cls=RespanCommand)
@click.option("--data-dir", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@model_options
@click.option("--loss", type=click.Choice(["res", "l1", "l2"]), default="res", show_default=True)
@click.option("--input", "input_", type=click.Choice(["xt", "et"]), default="xt", show_default=True)
@click.option("--no-sci", is_flag=True, help="Inject the condition after the first block instead of the shallow layer.")
@schedule_options()
@seed_option
@click.option("--ckpt", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--log", "log_path", type=str, default=None, help="Per-epoch CSV; - for stdout.")
@click.pass_obj
def train_cmd(
    state,
    data_dir: Path,
    epochs: int,
    lr: float,
    weight_decay: float,
    gamma: float,
    per_band_penalty: bool,
    hidden: int,
    blocks: int,
    emb_dim: int,
    accum: int,
    warmup: int,
    clip_norm: float,
    ema_decay: float,
    val_count: int,
    loss: str,
    input_: str,
    no_sci: bool,
    steps: int,
    p: float,
    kappa: float,
    seed: int,
    ckpt: Path,
    log_path: Optional[str],
):
    """Trains the residual predictor and writes an RPDC checkpoint."""
    cfg = train_config(
        epochs=epochs,
        lr=lr,
        weight_decay=weight_decay,
        loss=loss,
        gamma=gamma,
        per_band_penalty=per_band_penalty,
        seed=seed,
        accum=accum,
        warmup=warmup,
        clip_norm=clip_norm,
        ema_decay=ema_decay,
        val_count=val_count,
        hidden=hidden,
        blocks=blocks,
        emb_dim=emb_dim,
        sci=not no_sci,
        input=input_,
        schedule=schedule_config(T=steps, p=p, kappa=kappa),
    )
    result = train(data_dir, cfg, ckpt, log_path=log_path, threads=state.threads, quiet=state.quiet)
    final = result.final
    summary = echo_table(
        [[final.epoch, final.loss, final.val_sam, final.val_psnr, final.baseline_sam]],
        ["epoch", "loss", "val SAM", "val PSNR", "baseline SAM"],
    )
    click.echo(summary, err=log_path == "-")


def setup(cli: click.Group):
    cli.add_command(train_cmd)
