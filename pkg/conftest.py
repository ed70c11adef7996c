import pytest
from click.testing import CliRunner

from core.datagen import generate_dataset, generate_scene, scene_config
from core.schedule import build_schedule, schedule_config
from core.tensor_io import SeededGaussian


@pytest.fixture
def rng():
    return SeededGaussian(0)


@pytest.fixture
def tab():
    return build_schedule(schedule_config())


@pytest.fixture
def scene():
    return generate_scene(scene_config(seed=3))


@pytest.fixture
def small_dataset(tmp_path):
    """Six 8x8 four-band scenes at scale 2."""
    out = tmp_path / "data"
    generate_dataset(out, 6, scene_config(size=8, scale=2, blobs=3, seed=5), quiet=True)
    return out


@pytest.fixture
def runner(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("RESPAN_DB", raising=False)
    monkeypatch.delenv("RESPAN_THREADS", raising=False)
    return CliRunner(mix_stderr=False)


@pytest.fixture
def cli():
    from main import cli as group

    return group


def pytest_sessionfinish():
    print("Session finished")
