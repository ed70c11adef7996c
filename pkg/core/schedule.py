"""
Cosine noise schedule for the residual chain.

    f(t)       = cos(((t / T + p) / (1 + p)) * pi / 2)
    alpha_bar  = 1 - f(t) / f(0)          alpha_bar[0] = 0, alpha_bar[T] = 1
    alpha[t]   = alpha_bar[t] - alpha_bar[t - 1]

``p`` is the cosine offset hyperparameter (larger p, more noise at early steps).
f(T) = cos(pi / 2) is zero analytically; alpha_bar[T] is pinned to exactly 1 and the
increments are differences of the pinned table. The ends are exact; the partial sums
of alpha match alpha_bar only up to float accumulation, within about 1e-15.
"""
from __future__ import annotations

import math
from typing import Tuple

import numpy as np
from pydantic import BaseModel, validator

from core.common import ConfigError, StepRangeError, validated


class ScheduleConfig(BaseModel):
    T: int = 15
    p: float = 8e-3
    kappa: float = 1.0

    class Config:
        allow_mutation = False

    @validator("T")
    def _steps(cls, v):
        if v < 1:
            raise ValueError("T must be >= 1")
        return v

    @validator("p", "kappa")
    def _positive(cls, v, field):
        if not v > 0 or not math.isfinite(v):
            raise ValueError(f"{field.name} must be a finite value > 0")
        return v


class ScheduleTable:
    """alpha_1..alpha_T (index 0 unused and zero), alpha_bar_0..alpha_bar_T, kappa."""

    def __init__(self, alpha: np.ndarray, alpha_bar: np.ndarray, kappa: float) -> None:
        self.alpha = alpha
        self.alpha_bar = alpha_bar
        self.kappa = float(kappa)
        self.alpha.setflags(write=False)
        self.alpha_bar.setflags(write=False)

    @property
    def T(self) -> int:
        return len(self.alpha_bar) - 1

    def check_step(self, t: int, lo: int = 1) -> None:
        if not lo <= t <= self.T:
            raise StepRangeError("schedule", f"t={t} outside [{lo}, {self.T}]")

    def __repr__(self) -> str:
        return f"ScheduleTable(T={self.T}, kappa={self.kappa})"


def schedule_config(**kwargs) -> ScheduleConfig:
    return validated(ScheduleConfig, "schedule", **kwargs)


def cosine_alpha_bar(T: int, p: float) -> np.ndarray:
    """Raw 1 - f(t)/f(0) for t = 0..T, before pinning."""
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((steps / T + p) / (1.0 + p)) * (np.pi / 2.0))
    return 1.0 - f / f[0]


def build_schedule(cfg: ScheduleConfig) -> ScheduleTable:
    if cfg.T < 1 or cfg.p <= 0 or cfg.kappa <= 0:
        raise ConfigError("schedule", f"invalid schedule {cfg!r}")

    alpha_bar = cosine_alpha_bar(cfg.T, cfg.p)
    alpha_bar[0] = 0.0
    alpha_bar[-1] = 1.0

    alpha = np.zeros_like(alpha_bar)
    alpha[1:] = np.diff(alpha_bar)
    if np.any(alpha[1:] <= 0):
        raise ConfigError("schedule", f"non-increasing alpha_bar for T={cfg.T}, p={cfg.p}")
    return ScheduleTable(alpha, alpha_bar, cfg.kappa)


def marginal_params(tab: ScheduleTable, t: int) -> Tuple[float, float]:
    """(1 - alpha_bar_t, kappa * sqrt(alpha_bar_t)); t = 0 gives (1, 0)."""
    tab.check_step(t, lo=0)
    ab = float(tab.alpha_bar[t])
    return 1.0 - ab, tab.kappa * math.sqrt(ab)
