from pathlib import Path

import click

from core.common import seed_option
from core.datagen import generate_dataset, scene_config
from core.logging_module import get_log
from core.special_methods import RespanCommand

_log = get_log(__name__)


@click.command("gen-data", cls=RespanCommand)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--count", type=click.IntRange(min=0), default=64, show_default=True)
@click.option("--size", type=int, default=32, show_default=True, help="HRMS side length.")
@click.option("--bands", type=int, default=4, show_default=True)
@click.option("--scale", type=int, default=4, show_default=True, help="Decimation factor.")
@click.option("--blur-sigma", type=float, default=1.0, show_default=True)
@click.option("--blobs", type=int, default=6, show_default=True)
@seed_option
@click.pass_obj
def gen_data(state, out_dir: Path, count: int, size: int, bands: int, scale: int, blur_sigma: float, blobs: int, seed: int):
    """Writes synthetic (HRMS, LRMS, PAN) triples and a manifest."""
    cfg = scene_config(size=size, bands=bands, scale=scale, blur_sigma=blur_sigma, blobs=blobs, seed=seed)
    manifest = generate_dataset(out_dir, count, cfg, threads=state.threads, quiet=state.quiet)
    click.echo(f"{manifest.count} scenes -> {out_dir}")


def setup(cli: click.Group):
    cli.add_command(gen_data)
