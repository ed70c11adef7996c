"""
Training loop for the residual predictor.

Each step draws one scene, one timestep and one marginal sample, predicts e_0 from the
latent state and takes the gradient of the selected objective w.r.t. the prediction
back through the network. ``accum`` per-image gradients are averaged, clipped to a
global norm and handed to AdamW, whose learning rate warms up linearly and then
follows a cosine decay. An exponential moving average of the weights is kept next to
the live ones; it is what validation samples with and what the checkpoint stores.
After each epoch the reverse chain is run on the validation split and SAM / PSNR are
logged next to the interpolated-LRMS baseline.

Random streams are derived from the seed: child 0 initialises the weights, child 1
drives shuffling and marginal draws, child 2 (one grandchild per validation scene)
drives validation sampling. Validation may run across threads; its result does not
depend on the thread count.
"""
from __future__ import annotations

import math
import sys
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Protocol, Tuple

import numpy as np
import pandas as pd
from alive_progress import alive_bar
from pydantic import BaseModel, validator

from core.common import ConfigError, PathLike, TrainingDivergence, map_in_threads, validated, write_csv
from core.datagen import Scene, load_dataset
from core.denoiser import (
    DenoiserParams,
    DenoiserPredictor,
    backward,
    denoiser_config,
    forward,
    save_checkpoint,
)
from core.diffusion import make_training_sample, sample
from core.logging_module import get_log
from core.losses import DEFAULT_GAMMA, get_loss
from core.metrics import psnr, sam
from core.schedule import ScheduleConfig, ScheduleTable, build_schedule
from core.tensor_io import SeededGaussian
from core.wavelet import ConditionSet, build_condition

_log = get_log(__name__)

LOG_COLUMNS = ["epoch", "loss", "val_sam", "val_psnr", "baseline_sam"]


class ParamSet(Protocol):
    def items(self) -> Iterable[Tuple[str, np.ndarray]]:
        ...

    def bump(self) -> None:
        ...


@dataclass
class OptimizerState:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamSet, **kwargs) -> "OptimizerState":
        state = cls(**kwargs)
        for name, value in params.items():
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        return state


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> float:
    """Rescales ``grads`` in place so their global L2 norm is at most ``max_norm``; returns the norm before."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= factor
    return total


def lr_at(step: int, total: int, base: float, warmup: int = 0, floor: float = 0.1) -> float:
    """Linear warmup over ``warmup`` steps, then cosine decay from ``base`` to ``floor * base`` at ``total``."""
    if warmup > 0 and step <= warmup:
        return base * step / warmup
    span = max(total - warmup, 1)
    progress = min(max(step - warmup, 0) / span, 1.0)
    return base * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * progress)))


class WeightAverage:
    """Exponential moving average of a ``DenoiserParams``; ``params`` is what gets validated and saved."""

    def __init__(self, params: DenoiserParams, decay: float) -> None:
        self.decay = decay
        self.updates = 0
        self.params = params.copy()

    def update(self, live: ParamSet) -> None:
        self.updates += 1
        # short horizon early on so the average is not anchored to the init
        d = min(self.decay, (1.0 + self.updates) / (10.0 + self.updates))
        for name, w in live.items():
            avg = self.params[name]
            avg *= d
            avg += (1.0 - d) * w
        self.params.bump()


def adamw_step(opt: OptimizerState, params: ParamSet, grads: Mapping[str, np.ndarray]) -> ParamSet:
    """Bias-corrected Adam moments with decoupled weight decay, updated in place."""
    opt.step += 1
    c1 = 1.0 - opt.beta1**opt.step
    c2 = 1.0 - opt.beta2**opt.step
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ConfigError("denoiser-trainer", f"gradient {name} {g.shape} vs parameter {w.shape}")
        if name not in opt.m:
            opt.m[name] = np.zeros_like(w)
            opt.v[name] = np.zeros_like(w)
        m, v = opt.m[name], opt.v[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        if opt.weight_decay:
            w -= opt.lr * opt.weight_decay * w
        w -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    params.bump()
    return params


class TrainConfig(BaseModel):
    epochs: int = 200
    lr: float = 1e-4
    weight_decay: float = 1e-4
    loss: str = "res"
    gamma: float = DEFAULT_GAMMA
    per_band_penalty: bool = False
    seed: int = 0
    accum: int = 1
    warmup: int = 200
    min_lr_ratio: float = 0.1
    clip_norm: float = 1.0
    ema_decay: float = 0.999
    val_count: int = 8
    hidden: int = 32
    blocks: int = 3
    emb_dim: int = 32
    sci: bool = True
    input: str = "xt"
    schedule: ScheduleConfig = ScheduleConfig()

    class Config:
        allow_mutation = False

    @validator("epochs", "accum", "val_count")
    def _at_least_one(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1")
        return v

    @validator("warmup")
    def _warmup(cls, v):
        if v < 0:
            raise ValueError("warmup must be >= 0")
        return v

    @validator("min_lr_ratio")
    def _lr_floor(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("min_lr_ratio must lie in [0, 1]")
        return v

    @validator("ema_decay")
    def _ema(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")
        return v

    @validator("lr", "weight_decay", "gamma", "clip_norm")
    def _non_negative(cls, v, field):
        if not v >= 0 or not math.isfinite(v):
            raise ValueError(f"{field.name} must be a finite value >= 0")
        return v

    @validator("loss")
    def _loss(cls, v):
        if v not in ("res", "l1", "l2"):
            raise ValueError("loss must be one of res, l1, l2")
        return v

    @validator("seed")
    def _seed(cls, v):
        if v < 0:
            raise ValueError("seed must be >= 0")
        return v


def train_config(**kwargs) -> TrainConfig:
    return validated(TrainConfig, "denoiser-trainer", **kwargs)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    val_sam: float
    val_psnr: float
    baseline_sam: float


@dataclass
class TrainResult:
    params: DenoiserParams
    history: List[EpochRecord]

    @property
    def final(self) -> EpochRecord:
        return self.history[-1]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.history], columns=LOG_COLUMNS)


def split_scenes(scenes: List[Scene], val_count: int) -> Tuple[List[Scene], List[Scene]]:
    """Last ``val_count`` scenes validate; a single scene trains and validates on itself."""
    if len(scenes) == 1:
        return scenes, scenes
    k = min(val_count, len(scenes) - 1)
    return scenes[:-k], scenes[-k:]


def _conditions(scenes: List[Scene]) -> List[ConditionSet]:
    return [build_condition(s.lrms, s.pan) for s in scenes]


def validate(
    params: DenoiserParams,
    scenes: List[Scene],
    tab: ScheduleTable,
    rng: SeededGaussian,
    threads: int = 1,
) -> Tuple[float, float, float]:
    """Mean (SAM, PSNR) of sampled fusions and mean baseline SAM over ``scenes``."""

    def one(index: int) -> Tuple[float, float, float]:
        scene = scenes[index]
        predictor = DenoiserPredictor(params, tab.T)
        result = sample(scene.lrms, build_condition(scene.lrms, scene.pan), predictor, tab, rng.child(index))
        return sam(result.x_0_hat, scene.hrms), psnr(result.x_0_hat, scene.hrms), sam(scene.lrms, scene.hrms)

    rows = np.array(map_in_threads(one, list(range(len(scenes))), threads))
    return float(rows[:, 0].mean()), float(rows[:, 1].mean()), float(rows[:, 2].mean())


def train_on_scenes(
    scenes: List[Scene],
    cfg: TrainConfig,
    threads: int = 1,
    quiet: bool = False,
    log_path: Optional[PathLike] = None,
) -> TrainResult:
    if not scenes:
        raise ConfigError("denoiser-trainer", "no scenes to train on")
    tab = build_schedule(cfg.schedule)
    bands = scenes[0].hrms.bands
    net_cfg = denoiser_config(
        bands=bands, hidden=cfg.hidden, blocks=cfg.blocks, emb_dim=cfg.emb_dim, sci=cfg.sci, input=cfg.input
    )
    master = SeededGaussian(cfg.seed)
    params = DenoiserParams.init(net_cfg, master.child(0))
    step_rng = master.child(1)
    val_rng = master.child(2)
    opt = OptimizerState.for_params(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    average = WeightAverage(params, cfg.ema_decay)
    loss_fn = get_loss(cfg.loss, gamma=cfg.gamma, per_band=cfg.per_band_penalty)

    train_set, val_set = split_scenes(scenes, cfg.val_count)
    conds = _conditions(train_set)
    total_steps = cfg.epochs * math.ceil(len(train_set) / cfg.accum)
    # short runs warm up over at most a tenth of their updates
    warmup = min(cfg.warmup, total_steps // 10)
    _log.info(
        f"Training {params.count()} parameters on {len(train_set)} scenes "
        f"(validation {len(val_set)}), loss={cfg.loss}, T={tab.T}"
    )

    history: List[EpochRecord] = []
    with alive_bar(cfg.epochs, title="Training:", file=sys.stderr, disable=quiet) as bar:
        for epoch in range(1, cfg.epochs + 1):
            order = step_rng.permutation(len(train_set))
            losses = []
            acc: Optional["OrderedDict[str, np.ndarray]"] = None
            pending = 0
            for step, idx in enumerate(order):
                scene = train_set[int(idx)]
                draw = make_training_sample(scene.hrms, scene.lrms, tab, step_rng)
                pred, cache = forward(params, draw.x_t, conds[int(idx)], draw.t, tab.T)
                report = loss_fn(pred, draw.e_0)
                if not math.isfinite(report.value):
                    raise TrainingDivergence(
                        "denoiser-trainer", f"loss became {report.value}", epoch=epoch, step=step, t=draw.t
                    )
                losses.append(report.value)

                grads = backward(params, cache, report.grad)
                if acc is None:
                    acc = OrderedDict((n, g / cfg.accum) for n, g in grads.items())
                else:
                    for n, g in grads.items():
                        acc[n] += g / cfg.accum
                pending += 1
                if pending == cfg.accum or step == len(order) - 1:
                    if pending != cfg.accum:
                        for n in acc:
                            acc[n] *= cfg.accum / pending
                    clip_grad_norm(acc, cfg.clip_norm)
                    opt.lr = lr_at(opt.step + 1, total_steps, cfg.lr, warmup, cfg.min_lr_ratio)
                    adamw_step(opt, params, acc)
                    average.update(params)
                    acc, pending = None, 0

            val_sam, val_psnr, base_sam = validate(average.params, val_set, tab, val_rng, threads)
            record = EpochRecord(epoch, float(np.mean(losses)), val_sam, val_psnr, base_sam)
            history.append(record)
            _log.info(
                f"epoch {epoch}/{cfg.epochs} loss={record.loss:.6f} "
                f"val_sam={val_sam:.4f} val_psnr={val_psnr:.3f} baseline_sam={base_sam:.4f}"
            )
            if log_path is not None and str(log_path) != "-":
                write_csv(TrainResult(average.params, history).frame(), log_path)
            bar()

    result = TrainResult(average.params, history)
    if log_path is not None and str(log_path) == "-":
        write_csv(result.frame(), log_path)
    return result


def train(
    data_dir: PathLike,
    cfg: TrainConfig,
    ckpt: PathLike,
    log_path: Optional[PathLike] = None,
    threads: int = 1,
    quiet: bool = False,
) -> TrainResult:
    """Loads the dataset, trains, and writes the RPDC checkpoint."""
    scenes = load_dataset(data_dir)
    result = train_on_scenes(scenes, cfg, threads=threads, quiet=quiet, log_path=log_path)
    save_checkpoint(result.params, Path(ckpt))
    final = result.final
    if final.val_sam >= final.baseline_sam:
        _log.warning(
            f"validation SAM {final.val_sam:.4f} does not beat the LRMS baseline {final.baseline_sam:.4f}"
        )
    return result
