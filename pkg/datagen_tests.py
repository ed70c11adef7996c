import json

import numpy as np
import pytest

from core.common import ConfigError, DatasetError
from core.datagen import (
    MANIFEST_NAME,
    degrade,
    gaussian_kernel,
    generate_dataset,
    generate_scene,
    list_scenes,
    load_dataset,
    scene_config,
)
from core.tensor_io import ImageTensor, SeededGaussian, read_mbif


def test_scene_shapes_and_range(scene):
    assert scene.hrms.shape == (4, 32, 32)
    assert scene.lrms.shape == (4, 32, 32)
    assert scene.pan.shape == (1, 32, 32)
    for img in scene:
        assert img.data.min() >= 0.0 and img.data.max() <= 1.0


def test_pan_is_weighted_band_sum():
    cfg = scene_config(size=8, scale=2, pan_weights=[0.1, 0.2, 0.3, 0.4])
    s = generate_scene(cfg)
    expected = np.tensordot([0.1, 0.2, 0.3, 0.4], s.hrms.data, axes=1)
    np.testing.assert_allclose(s.pan.data[0], expected, rtol=1e-12)


def test_lrms_is_blocky():
    s = generate_scene(scene_config(size=16, scale=4, seed=2))
    blocks = s.lrms.data.reshape(4, 4, 4, 4, 4)
    assert np.all(blocks == blocks[:, :, :1, :, :1])


def test_kernel_is_normalised():
    k = gaussian_kernel(1.3)
    assert k.shape == (9, 9)
    assert k.sum() == pytest.approx(1.0)
    np.testing.assert_array_equal(gaussian_kernel(0.0), [[1.0]])


def test_constants_survive_degradation():
    flat = ImageTensor.full((3, 8, 8), 0.42)
    np.testing.assert_allclose(degrade(flat, 1.0, 4).data, 0.42, rtol=1e-12)


def test_scene_depends_only_on_stream():
    cfg = scene_config(size=8, scale=2)
    a = generate_scene(cfg, SeededGaussian(9).child(1))
    b = generate_scene(cfg, SeededGaussian(9).child(1))
    c = generate_scene(cfg, SeededGaussian(9).child(2))
    assert a == b
    assert a.hrms != c.hrms


@pytest.mark.parametrize(
    "kwargs",
    [{"size": 10, "scale": 4}, {"bands": 2, "pan_weights": [0.6, 0.6]}, {"pan_weights": [1.0]}, {"blur_sigma": -1}],
)
def test_invalid_scene_configs(kwargs):
    with pytest.raises(ConfigError):
        scene_config(**kwargs)


def test_dataset_layout(small_dataset):
    names = sorted(p.name for p in small_dataset.iterdir())
    assert names[0] == "000_hrms.mbif"
    assert MANIFEST_NAME in names
    assert len(names) == 6 * 3 + 1
    manifest = json.loads((small_dataset / MANIFEST_NAME).read_text())
    assert manifest["count"] == 6
    assert manifest["scene"]["size"] == 8
    assert [f.name for f in list_scenes(small_dataset)] == [f"{i:03d}" for i in range(6)]


def test_dataset_does_not_depend_on_threads(tmp_path, small_dataset):
    other = tmp_path / "threaded"
    generate_dataset(other, 6, scene_config(size=8, scale=2, blobs=3, seed=5), threads=4, quiet=True)
    for name in ("000_hrms.mbif", "005_pan.mbif", MANIFEST_NAME):
        assert (other / name).read_bytes() == (small_dataset / name).read_bytes()


def test_load_dataset(small_dataset):
    scenes = load_dataset(small_dataset)
    assert len(scenes) == 6
    assert scenes[2].hrms == read_mbif(small_dataset / "002_hrms.mbif")


def test_load_without_manifest(small_dataset):
    (small_dataset / MANIFEST_NAME).unlink()
    assert len(load_dataset(small_dataset)) == 6


def test_dataset_errors(tmp_path, small_dataset):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "empty")
    (small_dataset / "003_pan.mbif").unlink()
    with pytest.raises(DatasetError):
        load_dataset(small_dataset)
