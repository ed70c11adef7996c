"""
Residual-prediction losses with analytic gradients w.r.t. the prediction.

With h = e_0 - e0_hat, reduced by the mean over every element:

    L_res(h) = |h| + (1 - exp(-|h|))        |h| < 1
             = (|h| + a)^2 + b              |h| >= 1
    a = 1/(2e) - 1/2,  b = 7/4 - 3/(2e) - 1/(4e^2)

a and b make L_res C1 at |h| = 1. The boundary penalty clamps the prediction into
[min(e_0), max(e_0)]; the full objective is L_res + gamma * L_p. Subgradients at
h = 0 and at the clamp kinks are 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from core.common import ConfigError, ShapeError
from core.tensor_io import ImageTensor

RES_A = 1.0 / (2.0 * math.e) - 0.5
RES_B = 1.75 - 3.0 / (2.0 * math.e) - 1.0 / (4.0 * math.e**2)
DEFAULT_GAMMA = 10000.0


@dataclass(frozen=True)
class LossReport:
    value: float
    grad: ImageTensor

    def __add__(self, other: "LossReport") -> "LossReport":
        return LossReport(self.value + other.value, self.grad.add(other.grad))

    def scaled(self, factor: float) -> "LossReport":
        return LossReport(self.value * factor, self.grad.scale(factor))


def _residual(e0_hat: ImageTensor, e0: ImageTensor) -> np.ndarray:
    if e0_hat.shape != e0.shape:
        raise ShapeError("losses", f"prediction {e0_hat.shape} vs target {e0.shape}")
    return e0.data - e0_hat.data


def res_value(h: np.ndarray) -> np.ndarray:
    """Elementwise L_res before reduction."""
    m = np.abs(h)
    return np.where(m < 1.0, m + (1.0 - np.exp(-m)), (m + RES_A) ** 2 + RES_B)


def res_slope(h: np.ndarray) -> np.ndarray:
    """dL_res/dh elementwise."""
    m = np.abs(h)
    return np.sign(h) * np.where(m < 1.0, 1.0 + np.exp(-m), 2.0 * (m + RES_A))


def residual_loss(e0_hat: ImageTensor, e0: ImageTensor) -> LossReport:
    h = _residual(e0_hat, e0)
    n = h.size
    return LossReport(float(np.mean(res_value(h))), ImageTensor(-res_slope(h) / n))


def l1_loss(e0_hat: ImageTensor, e0: ImageTensor) -> LossReport:
    h = _residual(e0_hat, e0)
    return LossReport(float(np.mean(np.abs(h))), ImageTensor(-np.sign(h) / h.size))


def l2_loss(e0_hat: ImageTensor, e0: ImageTensor) -> LossReport:
    h = _residual(e0_hat, e0)
    return LossReport(float(np.mean(h * h)), ImageTensor(-2.0 * h / h.size))


def boundary_penalty(e0_hat: ImageTensor, e0: ImageTensor, per_band: bool = False) -> LossReport:
    """Mean(relu(e0_hat - max e_0) + relu(min e_0 - e0_hat)); extremes are tensor-wide unless ``per_band``."""
    _residual(e0_hat, e0)
    pred = e0_hat.data
    if per_band:
        hi = e0.data.max(axis=(1, 2), keepdims=True)
        lo = e0.data.min(axis=(1, 2), keepdims=True)
    else:
        hi = e0.data.max()
        lo = e0.data.min()
    over = pred - hi
    under = lo - pred
    n = pred.size
    value = float(np.mean(np.maximum(over, 0.0) + np.maximum(under, 0.0)))
    grad = ((over > 0).astype(np.float64) - (under > 0).astype(np.float64)) / n
    return LossReport(value, ImageTensor(grad))


def full_loss(
    e0_hat: ImageTensor, e0: ImageTensor, gamma: float = DEFAULT_GAMMA, per_band: bool = False
) -> LossReport:
    if gamma < 0:
        raise ConfigError("losses", f"gamma must be >= 0, got {gamma}")
    res = residual_loss(e0_hat, e0)
    if gamma == 0:
        return res
    return res + boundary_penalty(e0_hat, e0, per_band=per_band).scaled(gamma)


LossFn = Callable[[ImageTensor, ImageTensor], LossReport]


def get_loss(name: str, gamma: float = DEFAULT_GAMMA, per_band: bool = False) -> LossFn:
    """Training objective by CLI name. ``res`` is the full objective (L_res + gamma * L_p)."""
    table: Dict[str, LossFn] = {
        "res": lambda p, g: full_loss(p, g, gamma=gamma, per_band=per_band),
        "l1": l1_loss,
        "l2": l2_loss,
    }
    if name not in table:
        raise ConfigError("losses", f"unknown loss {name!r}; choose from {sorted(table)}")
    return table[name]


def loss_curves(h: np.ndarray) -> Dict[str, np.ndarray]:
    """Value and derivative in h of l1, l2 and L_res on a grid of residuals."""
    m = np.abs(h)
    return {
        "h": h,
        "l1": m,
        "l2": m * m,
        "res": res_value(h),
        "dl1": np.sign(h),
        "dl2": 2.0 * h,
        "dres": res_slope(h),
    }
