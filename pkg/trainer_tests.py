from collections import OrderedDict

import numpy as np
import pandas as pd
import pytest

import core.trainer
from core.common import ConfigError, TrainingDivergence
from core.datagen import generate_scene, load_dataset, scene_config
from core.denoiser import DenoiserParams, denoiser_config, encode_checkpoint, load_checkpoint
from core.losses import LossReport
from core.metrics import psnr
from core.schedule import schedule_config
from core.tensor_io import ImageTensor
from core.trainer import (
    LOG_COLUMNS,
    OptimizerState,
    WeightAverage,
    adamw_step,
    clip_grad_norm,
    lr_at,
    split_scenes,
    train,
    train_config,
    train_on_scenes,
)


class Weights:
    def __init__(self, **tensors):
        self.tensors = OrderedDict((k, np.asarray(v, dtype=np.float64)) for k, v in tensors.items())
        self.version = 0

    def items(self):
        return self.tensors.items()

    def bump(self):
        self.version += 1


def _tiny_cfg(**overrides):
    base = dict(epochs=2, hidden=4, blocks=1, emb_dim=8, val_count=2, lr=1e-3, schedule=schedule_config(T=4))
    base.update(overrides)
    return train_config(**base)


def test_zero_gradient_without_decay_is_a_no_op():
    w = Weights(a=[0.5, -1.0], b=[[2.0]])
    opt = OptimizerState.for_params(w, lr=0.1, weight_decay=0.0)
    adamw_step(opt, w, {"a": np.zeros(2), "b": np.zeros((1, 1))})
    np.testing.assert_array_equal(w.tensors["a"], [0.5, -1.0])
    np.testing.assert_array_equal(w.tensors["b"], [[2.0]])
    assert w.version == 1 and opt.step == 1


def test_first_step_moves_by_lr_plus_decay():
    w = Weights(x=[1.0])
    opt = OptimizerState.for_params(w, lr=0.01, weight_decay=0.1)
    adamw_step(opt, w, {"x": np.array([1.0])})
    assert w.tensors["x"][0] == pytest.approx(1.0 - 0.01 * (1.0 + 0.1 * 1.0), rel=1e-6)


def test_zero_learning_rate_freezes_weights():
    w = Weights(x=[0.3, 0.7])
    opt = OptimizerState.for_params(w, lr=0.0, weight_decay=0.5)
    for _ in range(3):
        adamw_step(opt, w, {"x": np.array([1.0, -2.0])})
    np.testing.assert_array_equal(w.tensors["x"], [0.3, 0.7])


def test_gradient_shape_mismatch():
    w = Weights(x=[1.0, 2.0])
    with pytest.raises(ConfigError):
        adamw_step(OptimizerState.for_params(w), w, {"x": np.zeros(3)})


def test_clip_grad_norm_caps_the_global_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
    assert clip_grad_norm(grads, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(grads["a"], [0.6, 0.0])
    np.testing.assert_allclose(grads["b"], [[0.8]])

    small = {"a": np.array([0.1])}
    clip_grad_norm(small, 1.0)
    np.testing.assert_array_equal(small["a"], [0.1])
    big = {"a": np.array([10.0])}
    clip_grad_norm(big, 0.0)
    np.testing.assert_array_equal(big["a"], [10.0])


def test_learning_rate_warms_up_then_decays():
    assert lr_at(1, 1000, 1e-3, warmup=10) == pytest.approx(1e-4)
    assert lr_at(10, 1000, 1e-3, warmup=10) == pytest.approx(1e-3)
    assert lr_at(1000, 1000, 1e-3, warmup=10, floor=0.1) == pytest.approx(1e-4)
    mid = lr_at(505, 1000, 1e-3, warmup=10, floor=0.0)
    assert mid == pytest.approx(5e-4)
    rates = [lr_at(s, 1000, 1e-3, warmup=10) for s in range(10, 1001)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert lr_at(5, 4, 1e-3) == pytest.approx(1e-4)


def test_weight_average_lags_the_live_weights():
    cfg = denoiser_config(bands=1, hidden=2, blocks=1, emb_dim=4)
    live = DenoiserParams.zeros(cfg)
    average = WeightAverage(live, decay=0.999)
    for name, w in live.items():
        w += 1.0
    average.update(live)
    # the first update uses decay 2 / 11
    for name, w in average.params.items():
        np.testing.assert_allclose(w, 9.0 / 11.0)
    assert average.params.version == 1
    assert live["out.weight"] is not average.params["out.weight"]


def test_zero_decay_average_is_the_live_weights():
    cfg = denoiser_config(bands=1, hidden=2, blocks=1, emb_dim=4)
    live = DenoiserParams.zeros(cfg)
    average = WeightAverage(live, decay=0.0)
    for name, w in live.items():
        w += 0.25
    average.update(live)
    for name, w in average.params.items():
        np.testing.assert_array_equal(w, live[name])


def test_train_config_validation():
    assert train_config().epochs == 200
    for bad in (
        {"loss": "huber"},
        {"epochs": 0},
        {"accum": 0},
        {"lr": -1.0},
        {"seed": -3},
        {"warmup": -1},
        {"ema_decay": 1.0},
        {"min_lr_ratio": 1.5},
        {"clip_norm": float("nan")},
    ):
        with pytest.raises(ConfigError):
            train_config(**bad)


def test_split_scenes():
    scenes = [generate_scene(scene_config(size=4, scale=2, seed=i)) for i in range(5)]
    train_set, val_set = split_scenes(scenes, 8)
    assert len(train_set) == 1 and len(val_set) == 4
    train_set, val_set = split_scenes(scenes, 2)
    assert train_set == scenes[:3] and val_set == scenes[3:]
    assert split_scenes(scenes[:1], 8) == (scenes[:1], scenes[:1])


def test_training_is_reproducible(small_dataset):
    scenes = load_dataset(small_dataset)
    a = train_on_scenes(scenes, _tiny_cfg(), quiet=True)
    b = train_on_scenes(scenes, _tiny_cfg(), quiet=True, threads=3)
    assert encode_checkpoint(a.params) == encode_checkpoint(b.params)
    assert a.history == b.history


def test_seed_changes_the_run(small_dataset):
    scenes = load_dataset(small_dataset)
    a = train_on_scenes(scenes, _tiny_cfg(epochs=1), quiet=True)
    b = train_on_scenes(scenes, _tiny_cfg(epochs=1, seed=1), quiet=True)
    assert encode_checkpoint(a.params) != encode_checkpoint(b.params)


def test_accumulation_takes_fewer_optimizer_steps(small_dataset, monkeypatch):
    steps = []
    real = core.trainer.adamw_step

    def counting(opt, params, grads):
        steps.append(opt.step)
        return real(opt, params, grads)

    monkeypatch.setattr(core.trainer, "adamw_step", counting)
    scenes = load_dataset(small_dataset)
    # 4 training scenes per epoch: accum=3 gives one full and one partial batch
    train_on_scenes(scenes, _tiny_cfg(epochs=1, accum=3), quiet=True)
    assert len(steps) == 2


def test_log_and_checkpoint(small_dataset, tmp_path):
    log = tmp_path / "runs" / "log.csv"
    ckpt = tmp_path / "runs" / "model.rpdc"
    result = train(small_dataset, _tiny_cfg(), ckpt, log_path=log, quiet=True)

    frame = pd.read_csv(log)
    assert list(frame.columns) == LOG_COLUMNS
    assert frame["epoch"].tolist() == [1, 2]
    assert np.all(np.isfinite(frame["loss"]))
    assert result.final.epoch == 2
    loaded = load_checkpoint(ckpt)
    assert loaded.cfg == result.params.cfg
    assert loaded.cfg.bands == 4


def test_result_carries_the_weight_average(small_dataset):
    scenes = load_dataset(small_dataset)
    live = train_on_scenes(scenes, _tiny_cfg(ema_decay=0.0), quiet=True)
    averaged = train_on_scenes(scenes, _tiny_cfg(ema_decay=0.9), quiet=True)
    assert encode_checkpoint(live.params) != encode_checkpoint(averaged.params)
    assert live.params.cfg == averaged.params.cfg


def test_divergence_is_reported(small_dataset, monkeypatch):
    def exploding(name, **kwargs):
        return lambda pred, e0: LossReport(float("nan"), ImageTensor.zeros(pred.shape))

    monkeypatch.setattr(core.trainer, "get_loss", exploding)
    with pytest.raises(TrainingDivergence) as info:
        train_on_scenes(load_dataset(small_dataset), _tiny_cfg(), quiet=True)
    assert info.value.epoch == 1
    assert info.value.step == 0
    assert 1 <= info.value.t <= 4


def test_empty_scene_list():
    with pytest.raises(ConfigError):
        train_on_scenes([], _tiny_cfg(), quiet=True)


@pytest.mark.slow
def test_default_run_beats_the_lrms_baseline(tmp_path):
    from core.datagen import generate_dataset

    data = tmp_path / "data"
    generate_dataset(data, 64, scene_config(seed=0), threads=4, quiet=True)
    result = train(data, train_config(), tmp_path / "model.rpdc", threads=4, quiet=True)
    assert result.final.val_sam < result.final.baseline_sam

    _, val_set = split_scenes(load_dataset(data), 8)
    baseline_psnr = np.mean([psnr(s.lrms, s.hrms) for s in val_set])
    assert result.final.val_psnr > baseline_psnr
