import numpy as np
import pytest

from core.common import ShapeError
from core.tensor_io import ImageTensor, SeededGaussian
from core.wavelet import ConditionSet, build_condition, db1_decompose, db1_reconstruct


def test_constant_maps_to_ll_only():
    quad = db1_decompose(ImageTensor.full((2, 4, 6), 0.3))
    assert quad.ll.shape == (2, 2, 3)
    np.testing.assert_allclose(quad.ll.data, 0.6)
    for detail in (quad.lh, quad.hl, quad.hh):
        np.testing.assert_array_equal(detail.data, 0.0)


def test_single_block_coefficients():
    block = ImageTensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    quad = db1_decompose(block)
    assert quad.ll.data.item() == 5.0
    assert quad.lh.data.item() == -2.0
    assert quad.hl.data.item() == -1.0
    assert quad.hh.data.item() == 0.0


@pytest.mark.parametrize("shape", [(1, 2, 2), (3, 8, 8), (2, 5, 7), (1, 1, 1), (4, 9, 4)])
def test_perfect_reconstruction(shape):
    img = ImageTensor(SeededGaussian(sum(shape)).normal(shape))
    back = db1_reconstruct(db1_decompose(img))
    assert back.shape == shape
    np.testing.assert_allclose(back.data, img.data, atol=1e-12)


def test_energy_preserved_for_even_sides():
    img = ImageTensor(SeededGaussian(3).normal((3, 10, 12)))
    quad = db1_decompose(img)
    energy = sum(float(np.sum(c.data**2)) for c in quad.components())
    assert energy == pytest.approx(float(np.sum(img.data**2)), rel=1e-12)


def test_odd_sides_replicate_pad():
    img = ImageTensor(np.arange(9.0).reshape(1, 3, 3))
    quad = db1_decompose(img)
    assert quad.ll.shape == (1, 2, 2)
    assert quad.source_hw == (3, 3)
    # bottom-right block is the replicated corner pixel
    assert quad.ll.data[0, 1, 1] == pytest.approx(2 * 8.0)


def test_condition_stack_layout(scene):
    cond = build_condition(scene.lrms, scene.pan)
    bands = scene.lrms.bands
    assert cond.channels == ConditionSet.channel_count(bands) == 1 + bands + 4 * (bands + 1)
    assert cond.stack.shape[1:] == scene.lrms.shape[1:]
    np.testing.assert_array_equal(cond.stack.data[0], scene.pan.data[0])
    np.testing.assert_array_equal(cond.stack.data[1 : 1 + bands], scene.lrms.data)
    ll = db1_decompose(scene.lrms).ll
    np.testing.assert_array_equal(cond.stack.data[1 + bands, ::2, ::2], ll.data[0])


def test_condition_on_odd_image():
    x = ImageTensor(SeededGaussian(1).uniform(0, 1, size=(2, 5, 5)))
    y = ImageTensor(SeededGaussian(2).uniform(0, 1, size=(1, 5, 5)))
    assert build_condition(x, y).stack.shape == (1 + 2 + 4 * 3, 5, 5)


def test_condition_shape_errors(scene):
    with pytest.raises(ShapeError):
        build_condition(scene.lrms, scene.lrms)
    with pytest.raises(ShapeError):
        build_condition(scene.lrms, ImageTensor.zeros((1, 4, 4)))
