from itertools import product
from pathlib import Path
from typing import Optional

import click
import numpy as np
import pandas as pd

from core.common import ConfigError, echo_table, parse_list, schedule_options, write_csv
from core.datagen import load_dataset
from core.logging_module import get_log
from core.schedule import schedule_config
from core.special_methods import RespanCommand
from core.trainer import train_config, train_on_scenes
from utils.pipeline.train import model_options

_log = get_log(__name__)

LOSS_ORDER = ("res", "l1", "l2")


def ordering_holds(means: dict) -> bool:
    """True when mean SAM orders res <= l1 <= l2 over the losses that were run."""
    present = [means[name] for name in LOSS_ORDER if name in means]
    return all(a <= b for a, b in zip(present, present[1:]))


@click.command("ablate", cls=RespanCommand)
@click.option("--data-dir", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--losses", default="res,l1,l2", show_default=True)
@click.option("--input", "inputs", default="xt", show_default=True, help="Comma list of xt, et.")
@click.option("--sci", default="on", show_default=True, help="Comma list of on, off.")
@model_options
@schedule_options()
@click.option("--csv", "csv_path", type=str, default=None, help="Per-run results; - for stdout.")
@click.pass_obj
def ablate(
    state,
    data_dir: Path,
    seeds: str,
    losses: str,
    inputs: str,
    sci: str,
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
    steps: int,
    p: float,
    kappa: float,
    csv_path: Optional[str],
):
    """Trains every (loss, input, sci, seed) variant and compares validation SAM."""
    seed_list = parse_list(seeds, int)
    loss_list = parse_list(losses)
    input_list = parse_list(inputs)
    sci_list = parse_list(sci)
    if not seed_list or not loss_list or not input_list or not sci_list:
        raise ConfigError("cli", "every ablation axis needs at least one value")
    for flag in sci_list:
        if flag not in ("on", "off"):
            raise ConfigError("cli", f"--sci takes on/off, got {flag!r}")

    scenes = load_dataset(data_dir)
    schedule = schedule_config(T=steps, p=p, kappa=kappa)
    runs = []
    for loss, input_, sci_flag, seed in product(loss_list, input_list, sci_list, seed_list):
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
            sci=sci_flag == "on",
            input=input_,
            schedule=schedule,
        )
        _log.info(f"ablation run loss={loss} input={input_} sci={sci_flag} seed={seed}")
        final = train_on_scenes(scenes, cfg, threads=state.threads, quiet=state.quiet).final
        runs.append(
            {
                "loss": loss,
                "input": input_,
                "sci": sci_flag,
                "seed": seed,
                "val_sam": final.val_sam,
                "val_psnr": final.val_psnr,
                "baseline_sam": final.baseline_sam,
            }
        )

    frame = pd.DataFrame(runs)
    if csv_path is not None:
        write_csv(frame, csv_path)

    grouped = frame.groupby(["loss", "input", "sci"], sort=False)[["val_sam", "val_psnr", "baseline_sam"]].mean()
    table = [[*key, *values] for key, values in zip(grouped.index, grouped.to_numpy().tolist())]
    click.echo(
        echo_table(table, ["loss", "input", "sci", "mean val SAM", "mean val PSNR", "baseline SAM"]),
        err=csv_path == "-",
    )

    for (input_, sci_flag), sub in frame.groupby(["input", "sci"], sort=False):
        means = {loss: float(np.mean(g["val_sam"])) for loss, g in sub.groupby("loss")}
        if not ordering_holds(means):
            _log.warning(
                f"loss ordering res <= l1 <= l2 inverted for input={input_} sci={sci_flag}: "
                + ", ".join(f"{k}={v:.4f}" for k, v in means.items())
            )


def setup(cli: click.Group):
    cli.add_command(ablate)
