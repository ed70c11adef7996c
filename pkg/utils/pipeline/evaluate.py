from pathlib import Path
from typing import List, Optional

import click
import numpy as np
import pandas as pd

from core.common import DatasetError, echo_table, write_csv
from core.datagen import SceneFiles, list_scenes
from core.logging_module import get_log
from core.metrics import evaluate
from core.special_methods import RespanCommand
from core.tensor_io import read_mbif, write_mbif
from core.wavelet import build_condition

_log = get_log(__name__)

METRIC_COLUMNS = ["sam_deg", "ergas", "scc", "psnr_db"]
PRED_SUFFIXES = ("_fused.mbif", ".mbif", "_hrms.mbif")


def find_prediction(pred_dir: Path, scene: SceneFiles) -> Path:
    for suffix in PRED_SUFFIXES:
        candidate = pred_dir / f"{scene.name}{suffix}"
        if candidate.exists():
            return candidate
    raise DatasetError("metrics", f"no prediction for scene {scene.name} in {pred_dir}")


def summary_row(frame: pd.DataFrame) -> dict:
    """``value(±std)`` per metric, population std over images."""
    row = {"image": "mean±std"}
    for col in METRIC_COLUMNS:
        values = frame[col].to_numpy(dtype=np.float64)
        row[col] = f"{values.mean():.4f}(±{values.std():.4f})"
    return row


def dump_condition(gt_dir: Path, scene: SceneFiles, out_dir: Path) -> None:
    cond = build_condition(read_mbif(gt_dir / scene.lrms), read_mbif(gt_dir / scene.pan))
    write_mbif(cond.stack, out_dir / f"{scene.name}_cond.mbif")
    for tag, quad in (("lrms", cond.lrms_quad), ("pan", cond.pan_quad)):
        for part, comp in zip(("ll", "lh", "hl", "hh"), quad.components()):
            write_mbif(comp, out_dir / f"{scene.name}_{tag}_{part}.mbif")


@click.command("eval", cls=RespanCommand)
@click.option("--pred", "pred_dir", type=click.Path(exists=True, file_okay=False, path_type=Path), default=None)
@click.option("--gt", "gt_dir", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--csv", "csv_path", type=str, default="-", show_default=True)
@click.option("--ratio", type=float, default=4.0, show_default=True, help="HRMS/LRMS resolution ratio for ERGAS.")
@click.option("--strict", is_flag=True, help="Fail on zero-norm pixels instead of scoring them 0.")
@click.option("--baseline", is_flag=True, help="Score the interpolated LRMS instead of predictions.")
@click.option("--dump-cond", type=click.Path(file_okay=False, path_type=Path), default=None)
def eval_cmd(
    pred_dir: Optional[Path],
    gt_dir: Path,
    csv_path: str,
    ratio: float,
    strict: bool,
    baseline: bool,
    dump_cond: Optional[Path],
):
    """Scores fused images against HRMS: SAM, ERGAS, SCC, PSNR per image plus mean±std."""
    if pred_dir is None and not baseline:
        raise DatasetError("metrics", "pass --pred or --baseline")
    scenes = list_scenes(gt_dir)
    if not scenes:
        raise DatasetError("metrics", f"empty dataset in {gt_dir}")

    rows: List[dict] = []
    for scene in scenes:
        gt = read_mbif(gt_dir / scene.hrms)
        pred_path = gt_dir / scene.lrms if baseline else find_prediction(pred_dir, scene)
        report = evaluate(read_mbif(pred_path), gt, ratio=ratio, strict=strict)
        rows.append({"image": scene.name, **report.as_dict()})
        if dump_cond is not None:
            dump_cond.mkdir(parents=True, exist_ok=True)
            dump_condition(gt_dir, scene, dump_cond)

    frame = pd.DataFrame(rows, columns=["image"] + METRIC_COLUMNS)
    out = pd.concat([frame, pd.DataFrame([summary_row(frame)])], ignore_index=True)
    write_csv(out, csv_path)
    if csv_path != "-":
        click.echo(echo_table(out.values.tolist(), list(out.columns)))


def setup(cli: click.Group):
    cli.add_command(eval_cmd)
