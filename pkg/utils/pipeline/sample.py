import time
from pathlib import Path
from typing import Optional

import click

from core.common import ConfigError, map_in_threads, schedule_options, seed_option
from core.datagen import list_scenes
from core.denoiser import DenoiserParams, DenoiserPredictor, load_checkpoint
from core.diffusion import sample
from core.logging_module import get_log
from core.schedule import ScheduleTable, build_schedule, schedule_config
from core.special_methods import RespanCommand
from core.tensor_io import ImageTensor, SeededGaussian, read_mbif, write_mbif
from core.wavelet import build_condition

_log = get_log(__name__)


def fuse(params: DenoiserParams, lrms: ImageTensor, pan: ImageTensor, tab: ScheduleTable, rng: SeededGaussian) -> ImageTensor:
    predictor = DenoiserPredictor(params, tab.T)
    started = time.perf_counter()
    result = sample(lrms, build_condition(lrms, pan), predictor, tab, rng)
    _log.info(f"fused {lrms.shape} in {time.perf_counter() - started:.3f}s ({predictor.calls} predictor calls)")
    return result.x_0_hat


@click.command("sample", cls=RespanCommand)
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--lrms", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--pan", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--data-dir", type=click.Path(exists=True, file_okay=False, path_type=Path), default=None)
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@schedule_options()
@seed_option
@click.pass_obj
def sample_cmd(
    state,
    ckpt: Path,
    lrms: Optional[Path],
    pan: Optional[Path],
    out: Optional[Path],
    data_dir: Optional[Path],
    out_dir: Optional[Path],
    steps: int,
    p: float,
    kappa: float,
    seed: int,
):
    """Runs the reverse chain on one LRMS/PAN pair or on every scene of a dataset."""
    single = lrms is not None or pan is not None or out is not None
    batch = data_dir is not None or out_dir is not None
    if single == batch:
        raise ConfigError("cli", "use either --lrms/--pan/--out or --data-dir/--out-dir")

    params = load_checkpoint(ckpt)
    tab = build_schedule(schedule_config(T=steps, p=p, kappa=kappa))
    master = SeededGaussian(seed)

    if single:
        if lrms is None or pan is None or out is None:
            raise ConfigError("cli", "single-image sampling needs --lrms, --pan and --out")
        write_mbif(fuse(params, read_mbif(lrms), read_mbif(pan), tab, master), out)
        click.echo(f"wrote {out}")
        return

    if data_dir is None or out_dir is None:
        raise ConfigError("cli", "batch sampling needs --data-dir and --out-dir")
    scenes = list_scenes(data_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(index: int) -> str:
        scene = scenes[index]
        fused = fuse(params, read_mbif(data_dir / scene.lrms), read_mbif(data_dir / scene.pan), tab, master.child(index))
        write_mbif(fused, out_dir / f"{scene.name}_fused.mbif")
        return scene.name

    done = map_in_threads(one, list(range(len(scenes))), state.threads)
    click.echo(f"{len(done)} fused images -> {out_dir}")


def setup(cli: click.Group):
    cli.add_command(sample_cmd)
