"""
Reduced-resolution fusion metrics.

    SAM    mean per-pixel spectral angle, degrees; pixels with a spectral norm below
           1e-8 count as angle 0 (``strict=True`` raises instead)
    ERGAS  100 / ratio * sqrt(mean_c (RMSE_c / mu_c)^2), mu_c the reference band mean
    SCC    band-averaged Pearson correlation of 3x3 Laplacian responses (replicate pad)
    PSNR   10 log10(1 / MSE) for a unit radiometric range; +inf when MSE = 0
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict

import numpy as np

from core.common import MetricError, ShapeError
from core.logging_module import get_log
from core.tensor_io import ImageTensor, filter_bands, mse

_log = get_log(__name__)

LAPLACIAN = np.array([[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]])
NORM_FLOOR = 1e-8


@dataclass(frozen=True)
class MetricReport:
    sam_deg: float
    ergas: float
    scc: float
    psnr_db: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def _pair(pred: ImageTensor, gt: ImageTensor, name: str) -> None:
    if pred.shape != gt.shape:
        raise ShapeError("metrics", f"{name}: prediction {pred.shape} vs reference {gt.shape}")


def sam(pred: ImageTensor, gt: ImageTensor, strict: bool = False) -> float:
    _pair(pred, gt, "sam")
    if gt.bands < 2:
        raise MetricError("metrics", "SAM needs at least 2 bands")
    p = pred.data.reshape(pred.bands, -1)
    g = gt.data.reshape(gt.bands, -1)
    norm_p = np.linalg.norm(p, axis=0)
    norm_g = np.linalg.norm(g, axis=0)
    degenerate = (norm_p < NORM_FLOOR) | (norm_g < NORM_FLOOR)
    if strict and np.any(degenerate):
        raise MetricError("metrics", f"{int(degenerate.sum())} pixels have a zero spectral norm")

    denom = np.where(degenerate, 1.0, norm_p * norm_g)
    cos = np.clip(np.sum(p * g, axis=0) / denom, -1.0, 1.0)
    angles = np.where(degenerate, 0.0, np.arccos(cos))
    return float(np.degrees(np.mean(angles)))


def ergas(pred: ImageTensor, gt: ImageTensor, ratio: float = 4.0) -> float:
    _pair(pred, gt, "ergas")
    mu = gt.band_mean()
    zero = np.flatnonzero(mu == 0)
    if zero.size:
        raise MetricError("metrics", f"ERGAS undefined: reference band {int(zero[0])} has zero mean")
    rmse = np.sqrt(np.mean((pred.data - gt.data) ** 2, axis=(1, 2)))
    return float(100.0 / ratio * math.sqrt(np.mean((rmse / mu) ** 2)))


def scc(pred: ImageTensor, gt: ImageTensor) -> float:
    _pair(pred, gt, "scc")
    if gt.height < 3 or gt.width < 3:
        raise MetricError("metrics", f"SCC needs H, W >= 3, got {gt.height}x{gt.width}")
    hp = filter_bands(pred, LAPLACIAN).data
    hg = filter_bands(gt, LAPLACIAN).data

    scores = []
    for c in range(gt.bands):
        a = hp[c].ravel() - hp[c].mean()
        b = hg[c].ravel() - hg[c].mean()
        denom = math.sqrt(float(a @ a) * float(b @ b))
        if denom == 0.0:
            _log.warning(f"SCC: band {c} has a constant high-pass response, scored 0")
            scores.append(0.0)
            continue
        scores.append(float(a @ b) / denom)
    return float(np.mean(scores))


def psnr(pred: ImageTensor, gt: ImageTensor) -> float:
    err = mse(pred, gt)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def evaluate(pred: ImageTensor, gt: ImageTensor, ratio: float = 4.0, strict: bool = False) -> MetricReport:
    return MetricReport(
        sam_deg=sam(pred, gt, strict=strict),
        ergas=ergas(pred, gt, ratio=ratio),
        scc=scc(pred, gt),
        psnr_db=psnr(pred, gt),
    )
