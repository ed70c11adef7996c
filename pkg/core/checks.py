"""
Numerical invariant checks run by ``verify``.

Register a new check with the ``@invariant("name")`` decorator; it receives a seeded
stream and returns ``(passed, detail)``. ``run_all`` runs every registered check in
registration order and never stops at the first failure.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from core.common import RespanError, map_in_threads
from core.datagen import generate_scene, scene_config
from core.denoiser import (
    DenoiserParams,
    DenoiserPredictor,
    decode_checkpoint,
    denoiser_config,
    encode_checkpoint,
    forward,
    backward,
    oracle_predictor,
)
from core.diffusion import forward_marginal, forward_step, posterior, sample
from core.logging_module import get_log
from core.losses import DEFAULT_GAMMA, LossFn, get_loss, res_slope, res_value, residual_loss
from core.metrics import sam
from core.schedule import ScheduleTable, build_schedule, schedule_config
from core.tensor_io import ImageTensor, SeededGaussian, decode_mbif, encode_mbif
from core.trajectory import ToyTask, roll_trajectories, straightness_report, toy_oracle
from core.wavelet import build_condition, db1_decompose, db1_reconstruct

_log = get_log(__name__)

CheckFn = Callable[[SeededGaussian], Tuple[bool, str]]
_REGISTRY: Dict[str, CheckFn] = {}

MC_CHAINS = 100_000
MC_SIGMAS = 4.0
SWEEP_P = (8e-3, 8e-2, 8e-1)


def invariant(name: str) -> Callable[[CheckFn], CheckFn]:
    def register(fn: CheckFn) -> CheckFn:
        _REGISTRY[name] = fn
        return fn

    return register


def registered() -> List[str]:
    return list(_REGISTRY)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    @property
    def status(self) -> str:
        return "PASS" if self.passed else "FAIL"


# -- helpers shared with the test suite ------------------------------------


def ls_crossover() -> float:
    """The h in (0, 1) where 2h overtakes 1 + exp(-h)."""
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if 1.0 + math.exp(-mid) > 2.0 * mid:
            lo = mid
        else:
            hi = mid
    return lo


def tiny_gradient_case(
    rng: SeededGaussian, sci: bool = True, input: str = "xt", blocks: int = 2
) -> Tuple[DenoiserParams, ImageTensor, object, int, int, ImageTensor]:
    """A 4-band 8x8 denoiser problem whose residuals sit away from every loss kink.

    ``e0`` lies 0.2 to 0.8 above the (tiny) prediction everywhere, so h stays inside
    (0, 1) and the prediction sits strictly below min(e0), on the linear side of the
    boundary penalty.
    """
    cfg = denoiser_config(bands=4, hidden=4, blocks=blocks, emb_dim=8, sci=sci, input=input)
    params = DenoiserParams.init(cfg, rng.child(0))
    params.tensors["out.weight"] *= 0.01
    T = 15
    t = 7
    x_T = ImageTensor(rng.child(1).uniform(0.0, 1.0, size=(4, 8, 8)))
    y = ImageTensor(rng.child(2).uniform(0.0, 1.0, size=(1, 8, 8)))
    x_t = ImageTensor(x_T.data + 0.3 * rng.child(3).normal((4, 8, 8)))
    cond = build_condition(x_T, y)
    pred, _ = forward(params, x_t, cond, t, T)
    offsets = rng.child(4).uniform(0.2, 0.8, size=pred.shape)
    e0 = ImageTensor(pred.data + offsets)
    return params, x_t, cond, t, T, e0


def finite_difference_check(
    params: DenoiserParams,
    x_t: ImageTensor,
    cond,
    t: int,
    T: int,
    e0: ImageTensor,
    loss_fn: LossFn,
    step: float = 1e-4,
    rel: float = 1e-4,
    floor: float = 1e-6,
) -> Tuple[int, int, float]:
    """Central differences over every parameter. Returns (checked, failures, worst excess)."""
    pred, cache = forward(params, x_t, cond, t, T)
    grads = backward(params, cache, loss_fn(pred, e0).grad)

    checked = failures = 0
    worst = 0.0
    for name, w in params.items():
        g = grads[name]
        flat = w.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = loss_fn(forward(params, x_t, cond, t, T)[0], e0).value
            flat[i] = keep - step
            down = loss_fn(forward(params, x_t, cond, t, T)[0], e0).value
            flat[i] = keep
            numeric = (up - down) / (2.0 * step)
            analytic = float(g.reshape(-1)[i])
            excess = abs(analytic - numeric) - (rel * max(abs(analytic), abs(numeric)) + floor)
            checked += 1
            if excess > 0:
                failures += 1
                worst = max(worst, excess)
    return checked, failures, worst


def _scalar_posterior_by_fusion(e_t: float, e0: float, t: int, tab: ScheduleTable) -> Tuple[float, float]:
    """Product of the one-step likelihood and the t-1 marginal, fused by precision."""
    a = float(tab.alpha[t])
    ab_prev = float(tab.alpha_bar[t - 1])
    k2 = tab.kappa**2
    like_mean, like_var = e_t + a * e0, k2 * a
    prior_mean, prior_var = (1.0 - ab_prev) * e0, k2 * ab_prev
    precision = 1.0 / like_var + 1.0 / prior_var
    mean = (like_mean / like_var + prior_mean / prior_var) / precision
    return mean, 1.0 / precision


# -- registered invariants --------------------------------------------------


@invariant("schedule: monotone, pinned ends, increments sum to 1")
def _schedule(rng: SeededGaussian):
    for p in SWEEP_P:
        tab = build_schedule(schedule_config(T=15, p=p, kappa=1.0))
        ab = tab.alpha_bar
        if ab[0] != 0.0 or ab[-1] != 1.0:
            return False, f"p={p}: ends {ab[0]}, {ab[-1]}"
        if np.any(np.diff(ab) <= 0):
            return False, f"p={p}: alpha_bar not strictly increasing"
        if abs(tab.alpha[1:].sum() - 1.0) > 1e-12:
            return False, f"p={p}: sum(alpha) = {tab.alpha[1:].sum()!r}"
    return True, f"p in {list(SWEEP_P)}"


@invariant("chain: iterated forward steps match the closed-form marginal")
def _marginal(rng: SeededGaussian):
    e0 = np.full(MC_CHAINS, 0.5)
    worst = 0.0
    for k, p in enumerate(SWEEP_P):
        tab = build_schedule(schedule_config(T=15, p=p, kappa=1.0))
        step_rng = rng.child(k)
        e = e0.copy()
        for t in range(1, tab.T + 1):
            e = forward_step(e, e0, t, tab, step_rng)
            ab = float(tab.alpha_bar[t])
            want_mean = (1.0 - ab) * 0.5
            want_var = tab.kappa**2 * ab
            mean_err = abs(float(e.mean()) - want_mean)
            bound = MC_SIGMAS * tab.kappa * math.sqrt(ab / MC_CHAINS)
            if mean_err > bound:
                return False, f"p={p} t={t}: mean off by {mean_err:.3e} (bound {bound:.3e})"
            var_err = abs(float(e.var()) / want_var - 1.0)
            if var_err > 0.02:
                return False, f"p={p} t={t}: variance off by {100 * var_err:.2f}%"
            worst = max(worst, var_err)
        direct = forward_marginal(e0, tab.T, tab, rng.child(10 + k))
        if abs(float(direct.var()) - tab.kappa**2) > 0.02:
            return False, f"p={p}: direct marginal variance {float(direct.var()):.4f}"
    return True, f"{MC_CHAINS} chains x {len(SWEEP_P)} schedules, worst variance error {100 * worst:.2f}%"


@invariant("posterior: equals the product-of-Gaussians fusion")
def _posterior(rng: SeededGaussian):
    draws = rng.child(0)
    worst = 0.0
    for case in range(1000):
        p = float(draws.uniform(1e-3, 1.0))
        kappa = float(draws.uniform(0.1, 2.0))
        tab = build_schedule(schedule_config(T=15, p=p, kappa=kappa))
        t = int(draws.integers(1, tab.T))
        e_t, e0 = (float(v) for v in draws.normal(2))
        post = posterior(np.array([e_t]), np.array([e0]), t, tab)
        if t == 1:
            if post.std != 0.0 or post.mean[0] != e0:
                return False, f"case {case}: t=1 posterior is not the point mass at e0"
            continue
        mean, var = _scalar_posterior_by_fusion(e_t, e0, t, tab)
        err_mean = abs(post.mean[0] - mean) / max(1.0, abs(mean))
        err_var = abs(post.std**2 - var) / var
        worst = max(worst, err_mean, err_var)
        if err_mean > 1e-10 or err_var > 1e-10:
            return False, f"case {case} (t={t}): relative error {max(err_mean, err_var):.2e}"
    return True, f"1000 cases, worst relative error {worst:.1e}"


@invariant("sampler: oracle predictor reconstructs HRMS in exactly T calls")
def _oracle_sampler(rng: SeededGaussian):
    tab = build_schedule(schedule_config())
    worst_err = worst_sam = 0.0
    for i in range(20):
        scene = generate_scene(scene_config(seed=i), rng.child(i))
        calls = []
        oracle = oracle_predictor(scene.hrms)

        def counted(x_t, cond, t, _oracle=oracle):
            calls.append(t)
            return _oracle(x_t, cond, t)

        result = sample(scene.lrms, build_condition(scene.lrms, scene.pan), counted, tab, rng.child(100 + i))
        if len(calls) != tab.T:
            return False, f"scene {i}: {len(calls)} predictor calls"
        worst_err = max(worst_err, float(np.max(np.abs(result.x_0_hat.data - scene.hrms.data))))
        worst_sam = max(worst_sam, sam(result.x_0_hat, scene.hrms))
    ok = worst_err < 1e-5 and worst_sam < 1e-3
    return ok, f"20 scenes, max |error| {worst_err:.1e}, max SAM {worst_sam:.1e} deg"


@invariant("losses: seam continuity, L_res(2) = 4, gradients, slope dominance")
def _losses(rng: SeededGaussian):
    one = np.array([1.0])
    below = np.array([np.nextafter(1.0, 0.0)])
    if abs(res_value(below)[0] - res_value(one)[0]) > 1e-9:
        return False, "L_res is not continuous at |h| = 1"
    left = 1.0 + math.exp(-1.0)
    if abs(res_slope(below)[0] - left) > 1e-9 or abs(res_slope(one)[0] - left) > 1e-9:
        return False, "L_res slope is not continuous at |h| = 1"
    if abs(res_value(np.array([2.0]))[0] - 4.0) > 1e-12:
        return False, f"L_res(2) = {res_value(np.array([2.0]))[0]!r}"

    draws = rng.child(0)
    for case in range(100):
        e0 = ImageTensor(draws.uniform(-2.0, 2.0, size=(2, 3, 3)))
        pred = ImageTensor(draws.uniform(-2.0, 2.0, size=(2, 3, 3)))
        h = e0.data - pred.data
        if np.any(np.abs(np.abs(h) - 1.0) < 1e-3) or np.any(np.abs(h) < 1e-3):
            continue
        grad = residual_loss(pred, e0).grad.data
        for idx in np.ndindex(h.shape):
            bumped = pred.data.copy()
            bumped[idx] += 1e-4
            up = residual_loss(ImageTensor(bumped), e0).value
            bumped[idx] -= 2e-4
            down = residual_loss(ImageTensor(bumped), e0).value
            numeric = (up - down) / 2e-4
            if abs(numeric - grad[idx]) > 1e-5 * max(abs(numeric), 1e-3):
                return False, f"case {case}: d/d pred {grad[idx]:.6e} vs {numeric:.6e}"

    crossover = ls_crossover()
    grid = np.linspace(1e-3, 1.0 - 1e-3, 999)
    slope = 1.0 + np.exp(-grid)
    if not np.all(slope > 1.0):
        return False, "L_res slope does not dominate l1 on (0, 1)"
    inner = grid < crossover
    if not np.all(slope[inner] > 2.0 * grid[inner]):
        return False, "L_res slope does not dominate l2 below the crossover"
    return True, f"dominates l1 on (0, 1) and l2 on (0, {crossover:.4f})"


@invariant("wavelet: perfect reconstruction and energy preservation")
def _wavelet(rng: SeededGaussian):
    draws = rng.child(0)
    worst_rec = worst_energy = 0.0
    for _ in range(1000):
        bands = int(draws.integers(1, 4))
        h, w = (int(v) for v in draws.integers(2, 17, size=2))
        img = ImageTensor(draws.normal((bands, h, w)))
        quad = db1_decompose(img)
        worst_rec = max(worst_rec, float(np.max(np.abs(db1_reconstruct(quad).data - img.data))))
        if h % 2 == 0 and w % 2 == 0:
            energy = sum(float(np.sum(c.data**2)) for c in quad.components())
            worst_energy = max(worst_energy, abs(energy - float(np.sum(img.data**2))) / float(np.sum(img.data**2)))
    ok = worst_rec < 1e-6 and worst_energy < 1e-6
    return ok, f"1000 images, reconstruction {worst_rec:.1e}, energy {worst_energy:.1e}"


@invariant("denoiser: analytic gradients match central differences")
def _gradients(rng: SeededGaussian):
    total = 0
    for k, name in enumerate(("res", "l1", "l2")):
        case = tiny_gradient_case(rng.child(k), blocks=1)
        checked, failures, worst = finite_difference_check(*case, get_loss(name, gamma=DEFAULT_GAMMA))
        total += checked
        if failures:
            return False, f"loss {name}: {failures}/{checked} parameters off (worst excess {worst:.1e})"
    return True, f"{total} parameter entries under res, l1, l2"


@invariant("trajectories: oracle paths are straight")
def _trajectories(rng: SeededGaussian):
    tab = build_schedule(schedule_config(T=15, kappa=0.1))
    worst = 0.0
    for k, pairing in enumerate(("shift", "swirl")):
        task = ToyTask(pairing, samples=100, seed=k)
        trajs = roll_trajectories(toy_oracle(task), task, 50, tab, rng.child(k), deterministic=True)
        if any(len(t.points) != tab.T + 1 for t in trajs):
            return False, f"{pairing}: wrong trajectory length"
        ratios = straightness_report(trajs).rows["ratio"].to_numpy()
        worst = max(worst, float(np.max(np.abs(ratios - 1.0))))
    return worst <= 1e-6, f"max |path/chord - 1| = {worst:.1e}"


@invariant("artifacts: sampling and checkpoints are reproducible")
def _determinism(rng: SeededGaussian):
    tab = build_schedule(schedule_config(T=4))
    scenes = [generate_scene(scene_config(size=8, scale=2, seed=i)) for i in range(3)]
    params = DenoiserParams.init(denoiser_config(bands=4, hidden=4, blocks=1, emb_dim=8), rng.child(0))

    def fuse(i: int) -> bytes:
        s = scenes[i]
        out = sample(s.lrms, build_condition(s.lrms, s.pan), DenoiserPredictor(params, tab.T), tab, rng.child(1).child(i))
        return encode_mbif(out.x_0_hat)

    serial = map_in_threads(fuse, [0, 1, 2], threads=1)
    threaded = map_in_threads(fuse, [0, 1, 2], threads=3)
    if serial != threaded:
        return False, "sampling depends on the thread count"
    if decode_mbif(serial[0]) != decode_mbif(fuse(0)):
        return False, "two samples with one seed differ"

    raw = encode_checkpoint(params)
    if encode_checkpoint(decode_checkpoint(raw)) != raw:
        return False, "checkpoint save -> load -> save is not byte-identical"
    return True, "sampling across threads, MBIF and RPDC bytes"


def run_all(seed: int = 0, only: Optional[List[str]] = None) -> List[CheckResult]:
    master = SeededGaussian(seed)
    results = []
    for index, (name, fn) in enumerate(_REGISTRY.items()):
        if only and name not in only:
            continue
        started = time.perf_counter()
        try:
            passed, detail = fn(master.child(index))
        except RespanError as e:
            passed, detail = False, e.detail
        _log.debug(f"{name}: {time.perf_counter() - started:.2f}s")
        results.append(CheckResult(name, bool(passed), detail))
    return results
