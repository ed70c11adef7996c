import numpy as np
import pandas as pd
import pytest

from core.common import ConfigError
from core.schedule import build_schedule, schedule_config
from core.tensor_io import SeededGaussian
from core.trajectory import (
    REPORT_COLUMNS,
    ToyTask,
    Trajectory,
    count_intersections,
    render_svg,
    roll_trajectories,
    segments_intersect,
    straightness_report,
    toy_config,
    toy_oracle,
    train_toy,
    write_report,
)


@pytest.fixture
def toy_tab():
    return build_schedule(schedule_config(T=15, kappa=0.1))


def test_source_is_seeded():
    task = ToyTask("shift", 200, seed=4)
    a, _ = task.training_set()
    b, _ = task.training_set()
    np.testing.assert_array_equal(a, b)
    assert a.shape == (200, 2)


def test_pairings():
    x = np.array([[1.0, 0.0], [0.0, -2.0]])
    np.testing.assert_array_equal(ToyTask("identity", 100).pair(x), x)
    np.testing.assert_array_equal(ToyTask("shift", 100).pair(x), x + 1.0)
    swirled = ToyTask("swirl", 100).pair(x)
    np.testing.assert_allclose(np.linalg.norm(swirled, axis=1), np.linalg.norm(x, axis=1))


@pytest.mark.parametrize("pairing", ["shift", "swirl"])
def test_oracle_paths_are_straight(toy_tab, pairing):
    task = ToyTask(pairing, 100)
    trajs = roll_trajectories(toy_oracle(task), task, 50, toy_tab, SeededGaussian(1), deterministic=True)
    assert len(trajs) == 50
    assert all(t.points.shape == (16, 2) for t in trajs)
    ratios = straightness_report(trajs).rows["ratio"].to_numpy()
    assert np.max(np.abs(ratios - 1.0)) <= 1e-6
    np.testing.assert_allclose(trajs[0].points[-1], trajs[0].target, atol=1e-12)


def test_identity_pairing_stays_put(toy_tab):
    task = ToyTask("identity", 100)
    trajs = roll_trajectories(toy_oracle(task), task, 5, toy_tab, SeededGaussian(2), deterministic=True)
    for t in trajs:
        assert t.chord == 0.0
        assert t.ratio == 1.0


def test_stochastic_rolls_are_seeded(toy_tab):
    task = ToyTask("swirl", 100)
    a = roll_trajectories(toy_oracle(task), task, 10, toy_tab, SeededGaussian(3))
    b = roll_trajectories(toy_oracle(task), task, 10, toy_tab, SeededGaussian(3))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.points, y.points)
    assert straightness_report(a).mean_ratio > 1.0


def test_ratio_edge_cases():
    still = Trajectory(np.zeros((3, 2)), np.zeros(2))
    assert still.ratio == 1.0
    loop = Trajectory(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]), np.zeros(2))
    assert loop.ratio == float("inf")
    bent = Trajectory(np.array([[0.0, 0.0], [3.0, 0.0], [3.0, 4.0]]), np.zeros(2))
    assert bent.chord == pytest.approx(5.0)
    assert bent.ratio == pytest.approx(7.0 / 5.0)


def test_segment_tests():
    o = np.array([0.0, 0.0])
    assert segments_intersect(o, np.array([1.0, 1.0]), np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    assert not segments_intersect(o, np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0]))
    # touching at an endpoint counts
    assert segments_intersect(o, np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.array([2.0, 5.0]))
    # collinear but disjoint does not
    assert not segments_intersect(o, np.array([1.0, 0.0]), np.array([2.0, 0.0]), np.array([3.0, 0.0]))


def test_x_crossing_counts_once():
    a = Trajectory(np.array([[0.0, 0.0], [1.0, 1.0]]), np.zeros(2))
    b = Trajectory(np.array([[0.0, 1.0], [1.0, 0.0]]), np.zeros(2))
    c = Trajectory(np.array([[5.0, 5.0], [6.0, 5.0]]), np.zeros(2))
    assert count_intersections([a, b]) == 1
    assert count_intersections([a, b, c]) == 1
    assert straightness_report([a, b]).intersections == 1


def test_report_files(toy_tab, tmp_path):
    task = ToyTask("shift", 100)
    trajs = roll_trajectories(toy_oracle(task), task, 12, toy_tab, SeededGaussian(5), deterministic=True)
    report = write_report(trajs, tmp_path / "out" / "traj", title="shift")
    frame = pd.read_csv(tmp_path / "out" / "traj.csv")
    assert list(frame.columns) == REPORT_COLUMNS
    assert frame["traj_id"].tolist() == list(range(12))
    assert report.mean_ratio == pytest.approx(1.0, abs=1e-6)
    assert (tmp_path / "out" / "traj.svg").read_text().lstrip().startswith("<?xml")


def test_svg_is_byte_stable(toy_tab, tmp_path):
    task = ToyTask("swirl", 100)
    trajs = roll_trajectories(toy_oracle(task), task, 8, toy_tab, SeededGaussian(6))
    render_svg(trajs, tmp_path / "a.svg")
    render_svg(trajs, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_empty_report():
    with pytest.raises(ConfigError):
        straightness_report([])


def test_toy_config_validation():
    assert toy_config().schedule.kappa == 0.1
    for bad in ({"pairing": "spiral"}, {"samples": 99}, {"batch": 0}, {"lr": 0.0}):
        with pytest.raises(ConfigError):
            toy_config(**bad)


def test_training_learns_the_shift(toy_tab):
    task = ToyTask("shift", 500, seed=1)
    cfg = toy_config(pairing="shift", samples=500, hidden=32, steps=400, batch=128, lr=1e-2, seed=1)
    run = train_toy(task, cfg)
    assert len(run.losses) == 400
    assert np.mean(run.losses[-20:]) < 0.1 * run.losses[0]

    trajs = roll_trajectories(run.predictor, task, 20, toy_tab, SeededGaussian(7), deterministic=True)
    ends = np.array([t.points[-1] for t in trajs])
    targets = np.array([t.target for t in trajs])
    assert np.mean(np.linalg.norm(ends - targets, axis=1)) < 0.3


def test_toy_training_is_reproducible():
    task = ToyTask("swirl", 100)
    cfg = toy_config(pairing="swirl", samples=100, hidden=8, steps=20, batch=16)
    assert train_toy(task, cfg).losses == train_toy(task, cfg).losses
