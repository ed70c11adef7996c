import math

import numpy as np
import pytest

from core.common import MetricError, ShapeError
from core.metrics import ergas, evaluate, psnr, sam, scc
from core.tensor_io import ImageTensor, SeededGaussian


def _positive(seed, shape=(4, 6, 6)):
    return ImageTensor(SeededGaussian(seed).uniform(0.1, 0.9, size=shape))


def test_identical_images():
    x = _positive(0)
    report = evaluate(x, x)
    assert report.sam_deg == pytest.approx(0.0, abs=1e-5)
    assert report.ergas == 0.0
    assert report.scc == pytest.approx(1.0)
    assert report.psnr_db == math.inf
    assert list(report.as_dict()) == ["sam_deg", "ergas", "scc", "psnr_db"]


def test_sam_of_orthogonal_spectra():
    a = ImageTensor(np.array([[[1.0]], [[0.0]]]))
    b = ImageTensor(np.array([[[0.0]], [[1.0]]]))
    assert sam(a, b) == pytest.approx(90.0)


def test_sam_ignores_scale():
    x = _positive(1)
    assert sam(x.scale(3.0), x) == pytest.approx(0.0, abs=1e-5)


def test_sam_degenerate_pixels():
    gt = ImageTensor(np.array([[[1.0, 0.0]], [[1.0, 0.0]]]))
    pred = ImageTensor(np.array([[[1.0, 0.5]], [[0.0, 0.5]]]))
    # the zero-norm reference pixel scores 0, the other is 45 degrees
    assert sam(pred, gt) == pytest.approx(22.5)
    with pytest.raises(MetricError):
        sam(pred, gt, strict=True)


def test_sam_needs_two_bands():
    x = _positive(2, (1, 4, 4))
    with pytest.raises(MetricError):
        sam(x, x)


def test_ergas_known_value():
    gt = ImageTensor.full((2, 3, 3), 0.5)
    pred = ImageTensor.full((2, 3, 3), 0.6)
    # RMSE 0.1 on every band, mean 0.5 -> 100 / 4 * 0.2
    assert ergas(pred, gt, ratio=4.0) == pytest.approx(5.0)
    assert ergas(pred, gt, ratio=2.0) == pytest.approx(10.0)


def test_ergas_zero_mean_band():
    gt = ImageTensor(np.stack([np.full((3, 3), 0.5), np.zeros((3, 3))]))
    with pytest.raises(MetricError):
        ergas(gt, gt)


def test_scc_is_invariant_to_offset_and_gain():
    x = _positive(3)
    assert scc(x.scale(2.0), x) == pytest.approx(1.0)
    shifted = ImageTensor(x.data + 0.25)
    assert scc(shifted, x) == pytest.approx(1.0)


def test_scc_constant_band_scores_zero():
    x = _positive(4, (2, 5, 5))
    flat = ImageTensor(np.stack([x.data[0], np.full((5, 5), 0.3)]))
    value = scc(flat, x)
    assert value == pytest.approx(0.5)


def test_scc_needs_three_pixels():
    x = _positive(5, (2, 2, 6))
    with pytest.raises(MetricError):
        scc(x, x)


def test_psnr_known_value():
    gt = ImageTensor.full((1, 4, 4), 0.5)
    pred = ImageTensor.full((1, 4, 4), 0.6)
    assert psnr(pred, gt) == pytest.approx(20.0)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        evaluate(_positive(6), _positive(6, (4, 6, 5)))


def _shuffle_bands(x, order):
    return ImageTensor(x.data[order])


def _shuffle_pixels(x, order):
    flat = x.data.reshape(x.bands, -1)[:, order]
    return ImageTensor(flat.reshape(x.shape))


def test_band_permutation_changes_nothing():
    gt, pred = _positive(7), _positive(8)
    order = [2, 0, 3, 1]
    before = evaluate(pred, gt)
    after = evaluate(_shuffle_bands(pred, order), _shuffle_bands(gt, order))
    assert after.sam_deg == pytest.approx(before.sam_deg, rel=1e-12)
    assert after.ergas == pytest.approx(before.ergas, rel=1e-12)
    assert after.scc == pytest.approx(before.scc, rel=1e-12)
    assert after.psnr_db == pytest.approx(before.psnr_db, rel=1e-12)


def test_pixel_shuffle_leaves_pointwise_metrics_alone():
    gt, pred = _positive(9), _positive(10)
    order = SeededGaussian(11).permutation(gt.height * gt.width)
    sg, sp = _shuffle_pixels(gt, order), _shuffle_pixels(pred, order)
    assert sam(sp, sg) == pytest.approx(sam(pred, gt), rel=1e-12)
    assert ergas(sp, sg) == pytest.approx(ergas(pred, gt), rel=1e-12)
    assert psnr(sp, sg) == pytest.approx(psnr(pred, gt), rel=1e-12)


def test_only_sam_and_scc_ignore_gain():
    x = _positive(12)
    scaled = x.scale(1.5)
    assert sam(scaled, x) == pytest.approx(0.0, abs=1e-5)
    assert scc(scaled, x) == pytest.approx(1.0)
    assert ergas(scaled, x) > 1.0
    assert psnr(scaled, x) < 40.0


def test_scc_of_one_negated_band():
    gt = _positive(13, (2, 8, 8))
    # 1 - x negates the Laplacian response of band 0, band 1 is untouched
    pred = ImageTensor(np.stack([1.0 - gt.data[0], gt.data[1]]))
    assert scc(pred, gt) == pytest.approx(0.0, abs=1e-12)
