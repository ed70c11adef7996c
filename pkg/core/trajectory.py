"""
2D transport lab: the residual chain between paired point clouds.

A source cloud s (mixture of Gaussians) is paired with a fixed target g(s). The chain
runs on e = g(s) - s exactly as it does on images, with the source playing the part of
the LRMS, and each trajectory records x_t = e_t + s for t = T..1 followed by x_0_hat.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
import pandas as pd
from pydantic import BaseModel, validator

from core.common import ConfigError, PathLike, TrainingDivergence, validated, write_csv
from core.denoiser import silu, silu_grad
from core.diffusion import posterior
from core.logging_module import get_log
from core.schedule import ScheduleConfig, ScheduleTable, build_schedule
from core.tensor_io import SeededGaussian
from core.trainer import OptimizerState, adamw_step

_log = get_log(__name__)

REPORT_COLUMNS = ["traj_id", "chord", "path", "ratio"]
MIXTURE_CENTRES = np.array([[-2.0, -2.0], [-2.0, 2.0], [2.0, -2.0], [2.0, 2.0]])
MIXTURE_STD = 0.35
SHIFT = np.array([1.0, 1.0])
SWIRL_RATE = 0.4


def _identity(x: np.ndarray) -> np.ndarray:
    return x.copy()


def _shift(x: np.ndarray) -> np.ndarray:
    return x + SHIFT


def _swirl(x: np.ndarray) -> np.ndarray:
    theta = SWIRL_RATE * np.linalg.norm(x, axis=-1)
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([c * x[..., 0] - s * x[..., 1], s * x[..., 0] + c * x[..., 1]], axis=-1)


PAIRINGS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": _identity,
    "shift": _shift,
    "swirl": _swirl,
}


class ToyConfig(BaseModel):
    pairing: str = "shift"
    samples: int = 2000
    hidden: int = 64
    steps: int = 1500
    batch: int = 256
    lr: float = 1e-3
    seed: int = 0
    schedule: ScheduleConfig = ScheduleConfig(kappa=0.1)

    class Config:
        allow_mutation = False

    @validator("pairing")
    def _pairing(cls, v):
        if v not in PAIRINGS:
            raise ValueError(f"pairing must be one of {sorted(PAIRINGS)}")
        return v

    @validator("samples")
    def _samples(cls, v):
        if v < 100:
            raise ValueError("samples must be >= 100")
        return v

    @validator("hidden", "steps", "batch")
    def _positive(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1")
        return v

    @validator("lr")
    def _lr(cls, v):
        if not v > 0:
            raise ValueError("lr must be > 0")
        return v


def toy_config(**kwargs) -> ToyConfig:
    return validated(ToyConfig, "trajectory-lab", **kwargs)


@dataclass(frozen=True)
class ToyTask:
    """A seeded mixture-of-Gaussians source and a deterministic pairing map."""

    pairing: str
    samples: int
    seed: int = 0

    def pair(self, x: np.ndarray) -> np.ndarray:
        return PAIRINGS[self.pairing](x)

    def source(self, n: int, rng: SeededGaussian) -> np.ndarray:
        comp = rng.integers(0, len(MIXTURE_CENTRES) - 1, size=n)
        return MIXTURE_CENTRES[comp] + MIXTURE_STD * rng.normal((n, 2))

    def training_set(self) -> Tuple[np.ndarray, np.ndarray]:
        s = self.source(self.samples, SeededGaussian(self.seed, (0,)))
        return s, self.pair(s)


# -- toy predictor ----------------------------------------------------------


class ToyParams:
    """Weights of the 3 -> hidden -> hidden -> 2 SiLU perceptron."""

    def __init__(self, tensors: "OrderedDict[str, np.ndarray]") -> None:
        self.tensors = tensors
        self.version = 0

    @classmethod
    def init(cls, hidden: int, rng: SeededGaussian) -> "ToyParams":
        tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for k, (fan_in, fan_out) in enumerate([(3, hidden), (hidden, hidden), (hidden, 2)], start=1):
            bound = 1.0 / math.sqrt(fan_in)
            tensors[f"w{k}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            tensors[f"b{k}"] = np.zeros(fan_out)
        return cls(tensors)

    def bump(self) -> None:
        self.version += 1

    def items(self) -> Iterable[Tuple[str, np.ndarray]]:
        return self.tensors.items()

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def _toy_forward(p: ToyParams, x: np.ndarray, t_frac: np.ndarray):
    inp = np.concatenate([x, t_frac[:, None]], axis=1)
    z1 = inp @ p["w1"] + p["b1"]
    a1 = silu(z1)
    z2 = a1 @ p["w2"] + p["b2"]
    a2 = silu(z2)
    out = a2 @ p["w3"] + p["b3"]
    return out, (inp, z1, a1, z2, a2)


def _toy_backward(p: ToyParams, cache, dout: np.ndarray) -> Dict[str, np.ndarray]:
    inp, z1, a1, z2, a2 = cache
    grads = {"w3": a2.T @ dout, "b3": dout.sum(axis=0)}
    dz2 = (dout @ p["w3"].T) * silu_grad(z2)
    grads["w2"] = a1.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    dz1 = (dz2 @ p["w2"].T) * silu_grad(z1)
    grads["w1"] = inp.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return grads


ToyPredictor = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


class TrainedToyPredictor:
    """Sees only position and t / T; the source positions passed as ``cond`` are ignored."""

    def __init__(self, params: ToyParams, T: int) -> None:
        self.params = params
        self.T = T

    def __call__(self, x_t: np.ndarray, cond: np.ndarray, t: int) -> np.ndarray:
        return _toy_forward(self.params, x_t, np.full(len(x_t), t / self.T))[0]


def toy_oracle(task: ToyTask) -> ToyPredictor:
    def predict(x_t: np.ndarray, cond: np.ndarray, t: int) -> np.ndarray:
        return task.pair(cond) - cond

    return predict


@dataclass
class ToyTraining:
    predictor: TrainedToyPredictor
    losses: List[float]


def train_toy(task: ToyTask, cfg: ToyConfig) -> ToyTraining:
    """Regresses e_0 = g(s) - s from marginal-corrupted states under a squared error."""
    if task.samples < 100:
        raise ConfigError("trajectory-lab", f"need at least 100 samples, got {task.samples}")
    tab = build_schedule(cfg.schedule)
    src, tgt = task.training_set()
    e0_all = tgt - src

    master = SeededGaussian(cfg.seed, (1,))
    params = ToyParams.init(cfg.hidden, master.child(0))
    rng = master.child(1)
    opt = OptimizerState.for_params(params, lr=cfg.lr, weight_decay=0.0)

    losses: List[float] = []
    for step in range(cfg.steps):
        idx = rng.integers(0, task.samples - 1, size=cfg.batch)
        t = rng.integers(1, tab.T, size=cfg.batch)
        ab = tab.alpha_bar[t][:, None]
        e0 = e0_all[idx]
        e_t = (1.0 - ab) * e0 + tab.kappa * np.sqrt(ab) * rng.normal((cfg.batch, 2))
        x_t = e_t + src[idx]

        pred, cache = _toy_forward(params, x_t, t / tab.T)
        diff = pred - e0
        loss = float(np.mean(diff * diff))
        if not math.isfinite(loss):
            raise TrainingDivergence("trajectory-lab", f"toy loss became {loss}", epoch=0, step=step, t=int(t[0]))
        losses.append(loss)
        adamw_step(opt, params, _toy_backward(params, cache, 2.0 * diff / diff.size))

    _log.info(f"Toy {task.pairing}: loss {losses[0]:.5f} -> {losses[-1]:.5f} over {cfg.steps} steps")
    return ToyTraining(TrainedToyPredictor(params, tab.T), losses)


# -- trajectories ---------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    points: np.ndarray
    target: np.ndarray

    @property
    def chord(self) -> float:
        return float(np.linalg.norm(self.points[-1] - self.points[0]))

    @property
    def path(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))

    @property
    def ratio(self) -> float:
        chord, path = self.chord, self.path
        if chord == 0.0:
            return 1.0 if path == 0.0 else math.inf
        return path / chord


def roll_trajectories(
    predictor: ToyPredictor,
    task: ToyTask,
    n: int,
    tab: ScheduleTable,
    rng: SeededGaussian,
    deterministic: bool = False,
) -> List[Trajectory]:
    """Runs the reverse chain on ``n`` fresh sources; ``deterministic`` zeroes e_T and posterior noise."""
    src = task.source(n, rng.child(0))
    noise = rng.child(1)
    if deterministic:
        e_t = np.zeros((n, 2))
    else:
        e_t = tab.kappa * math.sqrt(float(tab.alpha_bar[tab.T])) * noise.normal((n, 2))

    points = []
    for t in range(tab.T, 0, -1):
        x_t = e_t + src
        points.append(x_t)
        post = posterior(e_t, predictor(x_t, src, t), t, tab)
        e_t = post.mean
        if not deterministic and post.std > 0:
            e_t = e_t + post.std * noise.normal((n, 2))
    points.append(e_t + src)

    stacked = np.stack(points, axis=1)
    target = task.pair(src)
    return [Trajectory(stacked[i], target[i]) for i in range(n)]


def _orient(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> np.ndarray:
    return np.sign((q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0]))


def _on_segment(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> np.ndarray:
    """r lies in the bounding box of pq (used for collinear triples)."""
    return (
        (np.minimum(p[..., 0], q[..., 0]) <= r[..., 0])
        & (r[..., 0] <= np.maximum(p[..., 0], q[..., 0]))
        & (np.minimum(p[..., 1], q[..., 1]) <= r[..., 1])
        & (r[..., 1] <= np.maximum(p[..., 1], q[..., 1]))
    )


def segments_intersect(p1: np.ndarray, p2: np.ndarray, q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Closed-segment intersection test, broadcast over leading axes."""
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    proper = (d1 * d2 < 0) & (d3 * d4 < 0)
    touching = (
        ((d1 == 0) & _on_segment(q1, q2, p1))
        | ((d2 == 0) & _on_segment(q1, q2, p2))
        | ((d3 == 0) & _on_segment(p1, p2, q1))
        | ((d4 == 0) & _on_segment(p1, p2, q2))
    )
    return proper | touching


def count_intersections(trajs: List[Trajectory]) -> int:
    """Intersecting segment pairs across distinct trajectories."""
    total = 0
    for i in range(len(trajs)):
        a = trajs[i].points
        for j in range(i + 1, len(trajs)):
            b = trajs[j].points
            hits = segments_intersect(
                a[:-1, None, :], a[1:, None, :], b[None, :-1, :], b[None, 1:, :]
            )
            total += int(hits.sum())
    return total


@dataclass
class StraightnessReport:
    rows: pd.DataFrame
    intersections: int

    @property
    def mean_ratio(self) -> float:
        return float(self.rows["ratio"].mean())


def straightness_report(trajs: List[Trajectory]) -> StraightnessReport:
    if not trajs:
        raise ConfigError("trajectory-lab", "no trajectories to report")
    rows = pd.DataFrame(
        [(i, t.chord, t.path, t.ratio) for i, t in enumerate(trajs)],
        columns=REPORT_COLUMNS,
    )
    return StraightnessReport(rows, count_intersections(trajs))


def render_svg(trajs: List[Trajectory], path: PathLike, title: Optional[str] = None) -> None:
    """Source / target scatter with every trajectory as a polyline; output bytes are seed-stable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    starts = np.array([t.points[0] for t in trajs])
    targets = np.array([t.target for t in trajs])

    with plt.rc_context({"svg.hashsalt": "respan", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 6))
        for t in trajs:
            ax.plot(t.points[:, 0], t.points[:, 1], color="tab:gray", lw=0.8, alpha=0.7)
        ax.scatter(starts[:, 0], starts[:, 1], s=10, color="tab:blue", label="x_T")
        ax.scatter(targets[:, 0], targets[:, 1], s=10, color="tab:red", label="target")
        ax.set_aspect("equal")
        ax.legend(loc="upper left")
        if title:
            ax.set_title(title)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    _log.debug(f"Wrote {path}")


def write_report(trajs: List[Trajectory], out_prefix: PathLike, title: Optional[str] = None) -> StraightnessReport:
    """``<prefix>.csv`` with per-trajectory ratios and ``<prefix>.svg`` overlay."""
    report = straightness_report(trajs)
    prefix = str(out_prefix)
    write_csv(report.rows, prefix + ".csv")
    render_svg(trajs, prefix + ".svg", title=title)
    _log.info(
        f"{len(trajs)} trajectories: mean path/chord {report.mean_ratio:.4f}, "
        f"{report.intersections} segment crossings"
    )
    return report
