"""
Residual Markov chain over e = HRMS - LRMS.

    forward    q(e_t | e_{t-1}, e_0) = N(e_{t-1} - alpha_t e_0, kappa^2 alpha_t)
    marginal   q(e_t | e_0)          = N((1 - alpha_bar_t) e_0, kappa^2 alpha_bar_t)
    posterior  p(e_{t-1} | e_t, e_0) = N((alpha_bar_{t-1}/alpha_bar_t) e_t + (alpha_t/alpha_bar_t) e_0,
                                         kappa^2 (alpha_bar_{t-1}/alpha_bar_t) alpha_t)

The latent state fed to the predictor is x_t = e_t + x_T. ``forward_step``,
``forward_marginal`` and ``posterior`` accept either an ``ImageTensor`` or a plain
ndarray of any shape and return the same kind, so the 2D trajectory lab runs the
exact same math as the image path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Protocol, Union

import numpy as np

from core.common import ShapeError, StepRangeError
from core.logging_module import get_log
from core.schedule import ScheduleTable
from core.tensor_io import ImageTensor, SeededGaussian

_log = get_log(__name__)

Field = Union[ImageTensor, np.ndarray]


def _arr(x: Field) -> np.ndarray:
    return x.data if isinstance(x, ImageTensor) else np.asarray(x, dtype=np.float64)


def _like(ref: Field, arr: np.ndarray) -> Field:
    return ImageTensor(arr) if isinstance(ref, ImageTensor) else arr


def _same_shape(a: Field, b: Field, op: str) -> None:
    if np.shape(_arr(a)) != np.shape(_arr(b)):
        raise ShapeError("diffusion-chain", f"{op}: {np.shape(_arr(a))} vs {np.shape(_arr(b))}")


def _step(tab: ScheduleTable, t: int) -> None:
    if not 1 <= t <= tab.T:
        raise StepRangeError("diffusion-chain", f"t={t} outside [1, {tab.T}]")


@dataclass(frozen=True)
class ChainState:
    t: int
    e_t: Field
    x_t: Field


@dataclass(frozen=True)
class PosteriorParams:
    mean: Field
    std: float


class TrainingSample(NamedTuple):
    t: int
    x_t: ImageTensor
    e_0: ImageTensor


class SampleResult(NamedTuple):
    x_0_hat: ImageTensor
    e_0_hat: ImageTensor


class Predictor(Protocol):
    def __call__(self, x_t: ImageTensor, cond, t: int) -> ImageTensor:
        ...


def forward_step(
    e_prev: Field,
    e_0: Field,
    t: int,
    tab: ScheduleTable,
    rng: SeededGaussian,
    stochastic: bool = True,
) -> Field:
    """One transition e_{t-1} -> e_t. ``stochastic=False`` drops the noise term."""
    _same_shape(e_prev, e_0, "forward_step")
    _step(tab, t)
    a = float(tab.alpha[t])
    out = _arr(e_prev) - a * _arr(e_0)
    if stochastic:
        out = out + tab.kappa * math.sqrt(a) * rng.normal(out.shape)
    return _like(e_prev, out)


def forward_marginal(
    e_0: Field,
    t: int,
    tab: ScheduleTable,
    rng: SeededGaussian,
    stochastic: bool = True,
) -> Field:
    _step(tab, t)
    ab = float(tab.alpha_bar[t])
    base = _arr(e_0)
    out = (1.0 - ab) * base
    if stochastic:
        out = out + tab.kappa * math.sqrt(ab) * rng.normal(base.shape)
    return _like(e_0, out)


def posterior(e_t: Field, e_0_hat: Field, t: int, tab: ScheduleTable) -> PosteriorParams:
    _same_shape(e_t, e_0_hat, "posterior")
    _step(tab, t)
    ab_t = float(tab.alpha_bar[t])
    if ab_t == 0.0:
        raise StepRangeError("diffusion-chain", f"alpha_bar[{t}] is zero")
    if t == 1:
        # alpha_bar_0 = 0: the last reverse step is deterministic
        return PosteriorParams(mean=_like(e_0_hat, _arr(e_0_hat).copy()), std=0.0)

    ab_prev = float(tab.alpha_bar[t - 1])
    a = float(tab.alpha[t])
    mean = (ab_prev / ab_t) * _arr(e_t) + (a / ab_t) * _arr(e_0_hat)
    std = tab.kappa * math.sqrt((ab_prev / ab_t) * a)
    return PosteriorParams(mean=_like(e_t, mean), std=std)


def make_training_sample(
    x_0: ImageTensor, x_T: ImageTensor, tab: ScheduleTable, rng: SeededGaussian
) -> TrainingSample:
    """One training draw: t ~ U{1..T}, e_0 = x_0 - x_T, x_t = marginal(e_0, t) + x_T."""
    _same_shape(x_0, x_T, "make_training_sample")
    t = int(rng.integers(1, tab.T))
    e_0 = x_0.sub(x_T)
    e_t = forward_marginal(e_0, t, tab, rng)
    return TrainingSample(t=t, x_t=e_t.add(x_T), e_0=e_0)


def sample(
    x_T: ImageTensor,
    cond,
    predictor: Predictor,
    tab: ScheduleTable,
    rng: SeededGaussian,
    stochastic: bool = True,
    on_step: Optional[Callable[[ChainState], None]] = None,
) -> SampleResult:
    """T reverse steps from e_T ~ N(0, kappa^2), one predictor call per step."""
    shape = x_T.shape
    e_t = ImageTensor(tab.kappa * math.sqrt(float(tab.alpha_bar[tab.T])) * rng.normal(shape))
    for t in range(tab.T, 0, -1):
        x_t = e_t.add(x_T)
        if on_step is not None:
            on_step(ChainState(t=t, e_t=e_t, x_t=x_t))
        e_0_hat = predictor(x_t, cond, t)
        if e_0_hat.shape != shape:
            raise ShapeError("diffusion-chain", f"predictor returned {e_0_hat.shape}, expected {shape}")
        post = posterior(e_t, e_0_hat, t, tab)
        mean = post.mean.data
        if stochastic and post.std > 0:
            mean = mean + post.std * rng.normal(shape)
        e_t = ImageTensor(mean)

    if on_step is not None:
        on_step(ChainState(t=0, e_t=e_t, x_t=e_t.add(x_T)))
    x_0_hat = e_t.add(x_T).clamp(0.0, 1.0)
    return SampleResult(x_0_hat=x_0_hat, e_0_hat=e_t)
