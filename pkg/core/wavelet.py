"""
One-level DB1 (Haar) decomposition and the predictor's condition stack.

Per 2x2 block (a b / c d) the transform is the orthonormal matrix
(1/2) * [[1, 1, 1, 1], [1, 1, -1, -1], [1, -1, 1, -1], [1, -1, -1, 1]]:

    ll = (a + b + c + d) / 2     lh = (a + b - c - d) / 2
    hl = (a - b + c - d) / 2     hh = (a - b - c + d) / 2

so a constant v maps to ll = 2v with zero details, and energy is preserved.
The matrix is symmetric and orthonormal, hence its own inverse. Odd sides are
replicate-padded by one row/column before the transform and cropped after the inverse.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from core.common import ShapeError
from core.tensor_io import ImageTensor, concat, nearest_upsample


@dataclass(frozen=True)
class WaveletQuad:
    ll: ImageTensor
    lh: ImageTensor
    hl: ImageTensor
    hh: ImageTensor
    source_hw: Tuple[int, int]

    def components(self) -> Tuple[ImageTensor, ImageTensor, ImageTensor, ImageTensor]:
        return self.ll, self.lh, self.hl, self.hh


def _haar(a, b, c, d):
    return (
        (a + b + c + d) / 2.0,
        (a + b - c - d) / 2.0,
        (a - b + c - d) / 2.0,
        (a - b - c + d) / 2.0,
    )


def db1_decompose(img: ImageTensor) -> WaveletQuad:
    x = img.data
    h, w = x.shape[1:]
    pad_h, pad_w = h % 2, w % 2
    if pad_h or pad_w:
        x = np.pad(x, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")

    a = x[:, 0::2, 0::2]
    b = x[:, 0::2, 1::2]
    c = x[:, 1::2, 0::2]
    d = x[:, 1::2, 1::2]
    ll, lh, hl, hh = _haar(a, b, c, d)
    return WaveletQuad(ImageTensor(ll), ImageTensor(lh), ImageTensor(hl), ImageTensor(hh), (h, w))


def db1_reconstruct(
    quad: WaveletQuad, height: Optional[int] = None, width: Optional[int] = None
) -> ImageTensor:
    height = quad.source_hw[0] if height is None else height
    width = quad.source_hw[1] if width is None else width

    a, b, c, d = _haar(quad.ll.data, quad.lh.data, quad.hl.data, quad.hh.data)
    bands, hh_, ww_ = a.shape
    out = np.empty((bands, 2 * hh_, 2 * ww_))
    out[:, 0::2, 0::2] = a
    out[:, 0::2, 1::2] = b
    out[:, 1::2, 0::2] = c
    out[:, 1::2, 1::2] = d
    return ImageTensor(out[:, :height, :width])


class ConditionSet:
    """PAN, pre-upsampled LRMS and both Haar quads brought back to H x W.

    ``stack`` orders channels as pan, lrms, lrms quad (ll, lh, hl, hh), pan quad
    (ll, lh, hl, hh): 1 + C + 4 * (C + 1) bands.
    """

    def __init__(self, pan: ImageTensor, lrms: ImageTensor, lrms_quad: WaveletQuad, pan_quad: WaveletQuad):
        self.pan = pan
        self.lrms = lrms
        self.lrms_quad = lrms_quad
        self.pan_quad = pan_quad
        h, w = lrms.height, lrms.width
        parts = [pan, lrms]
        for quad in (lrms_quad, pan_quad):
            for comp in quad.components():
                up = nearest_upsample(comp, 2)
                parts.append(ImageTensor(up.data[:, :h, :w]))
        self.stack = concat(parts)

    @property
    def channels(self) -> int:
        return self.stack.bands

    @staticmethod
    def channel_count(bands: int) -> int:
        return 1 + bands + 4 * (bands + 1)


def build_condition(x_T: ImageTensor, y: ImageTensor) -> ConditionSet:
    if y.bands != 1:
        raise ShapeError("wavelet-cond", f"PAN must have 1 band, got {y.bands}")
    if y.shape[1:] != x_T.shape[1:]:
        raise ShapeError("wavelet-cond", f"PAN {y.shape[1:]} vs LRMS {x_T.shape[1:]}")
    return ConditionSet(y, x_T, db1_decompose(x_T), db1_decompose(y))
