import struct

import numpy as np
import pytest

from core.common import ArgumentError, FormatError, ShapeError
from core.tensor_io import (
    ImageTensor,
    SeededGaussian,
    concat,
    decode_mbif,
    encode_mbif,
    filter_bands,
    gaussian_field,
    mse,
    nearest_upsample,
    read_mbif,
    write_mbif,
)


def test_two_dimensional_input_gets_a_band_axis():
    t = ImageTensor(np.ones((3, 5)))
    assert t.shape == (1, 3, 5)
    assert (t.bands, t.height, t.width) == (1, 3, 5)


def test_rejects_empty_and_non_finite():
    with pytest.raises(ShapeError):
        ImageTensor(np.zeros((0, 4, 4)))
    with pytest.raises(ArgumentError):
        ImageTensor(np.array([[[np.nan]]]))


def test_data_is_read_only():
    t = ImageTensor.zeros((2, 2, 2))
    with pytest.raises(ValueError):
        t.data[0, 0, 0] = 1.0


def test_arithmetic_checks_shapes():
    a = ImageTensor.full((2, 3, 3), 0.25)
    b = ImageTensor.full((2, 3, 3), 0.5)
    assert (a + b) == ImageTensor.full((2, 3, 3), 0.75)
    assert (b - a).data.max() == 0.25
    with pytest.raises(ShapeError):
        a.add(ImageTensor.zeros((1, 3, 3)))


def test_clamp_and_band_stats():
    t = ImageTensor(np.array([[[-1.0, 0.5]], [[2.0, 0.25]]]))
    c = t.clamp()
    assert c.data.min() == 0.0 and c.data.max() == 1.0
    np.testing.assert_array_equal(t.band_mean(), [-0.25, 1.125])


def test_mse_and_concat():
    a = ImageTensor.zeros((1, 2, 2))
    b = ImageTensor.full((1, 2, 2), 2.0)
    assert mse(a, b) == 4.0
    assert concat([a, b, a]).bands == 3
    with pytest.raises(ShapeError):
        concat([a, ImageTensor.zeros((1, 3, 3))])


def test_filters_preserve_constants():
    t = ImageTensor.full((3, 6, 6), 0.4)
    smoothed = filter_bands(t, np.full((3, 3), 1.0 / 9.0))
    np.testing.assert_allclose(smoothed.data, 0.4, atol=1e-15)
    up = nearest_upsample(ImageTensor(np.arange(4.0).reshape(1, 2, 2)), 2)
    assert up.shape == (1, 4, 4)
    assert up.data[0, 1, 1] == 0.0 and up.data[0, 3, 3] == 3.0


def test_seeded_streams_are_reproducible():
    a = SeededGaussian(7).normal((4, 4))
    b = SeededGaussian(7).normal((4, 4))
    np.testing.assert_array_equal(a, b)
    c0 = SeededGaussian(7).child(0).normal(8)
    c1 = SeededGaussian(7).child(1).normal(8)
    assert not np.array_equal(c0, c1)
    np.testing.assert_array_equal(c0, SeededGaussian(7).child(0).normal(8))


def test_integers_are_inclusive():
    draws = SeededGaussian(1).integers(1, 3, size=2000)
    assert set(np.unique(draws)) == {1, 2, 3}


def test_gaussian_field_moments():
    field = gaussian_field(SeededGaussian(2), (1, 200, 200), mean=0.5, std=0.1)
    assert abs(field.data.mean() - 0.5) < 0.005
    assert abs(field.data.std() - 0.1) < 0.005
    assert gaussian_field(SeededGaussian(2), (1, 2, 2), mean=0.3, std=0.0) == ImageTensor.full((1, 2, 2), 0.3)


def test_mbif_layout_and_round_trip(tmp_path):
    t = ImageTensor(np.arange(12, dtype=np.float32).reshape(3, 2, 2) / 8.0)
    raw = encode_mbif(t)
    assert raw[:4] == b"MBI1"
    assert struct.unpack_from("<IIII", raw, 4) == (1, 3, 2, 2)
    assert len(raw) == 20 + 4 * 12
    assert decode_mbif(raw) == t

    path = tmp_path / "nested" / "t.mbif"
    write_mbif(t, path)
    assert read_mbif(path) == t
    assert path.read_bytes() == raw


def test_mbif_quantizes_to_float32():
    t = ImageTensor(np.full((1, 1, 1), 0.1))
    assert decode_mbif(encode_mbif(t)) == t.quantized()
    assert decode_mbif(encode_mbif(t.quantized())) == t.quantized()


@pytest.mark.parametrize(
    "mutate, offset",
    [
        (lambda raw: b"XXXX" + raw[4:], 0),
        (lambda raw: raw[:-2], 66),
        (lambda raw: raw + b"\x00", 68),
        (lambda raw: raw[:4] + struct.pack("<I", 2) + raw[8:], 4),
    ],
)
def test_mbif_errors_name_offsets(mutate, offset):
    raw = encode_mbif(ImageTensor.zeros((3, 2, 2)))
    with pytest.raises(FormatError) as info:
        decode_mbif(mutate(raw))
    assert info.value.offset == offset


def test_mbif_non_finite_payload():
    raw = bytearray(encode_mbif(ImageTensor.zeros((1, 2, 2))))
    raw[20 + 8 : 20 + 12] = struct.pack("<f", float("inf"))
    with pytest.raises(FormatError) as info:
        decode_mbif(bytes(raw))
    assert info.value.offset == 28


def test_wrapping_copies_the_source_buffer():
    buf = np.zeros((1, 2, 2))
    t = ImageTensor(buf)
    buf[0, 0, 0] = 1.0
    assert t.data[0, 0, 0] == 0.0
    assert buf.flags.writeable


def test_bad_arguments_raise_engine_errors():
    with pytest.raises(ArgumentError):
        SeededGaussian(-1)
    with pytest.raises(ArgumentError):
        gaussian_field(SeededGaussian(0), (1, 2, 2), std=-0.1)
    with pytest.raises(ArgumentError) as info:
        filter_bands(ImageTensor.zeros((1, 4, 4)), np.ones((2, 2)))
    assert info.value.module == "tensor-io"


def test_mbif_round_trip_is_bit_exact_on_random_tensors():
    rng = SeededGaussian(3)
    for _ in range(1000):
        c, h, w = (int(v) for v in rng.integers(1, 5, size=3))
        t = ImageTensor(rng.normal((c, h, w))).quantized()
        raw = encode_mbif(t)
        back = decode_mbif(raw)
        assert back == t
        assert encode_mbif(back) == raw


def test_standard_normal_moments_over_a_million_draws():
    draws = SeededGaussian(0).normal(10**6)
    assert abs(draws.mean()) < 0.005
    assert abs(draws.var() - 1.0) < 0.01


def test_scaled_field_moments_over_1e5_draws():
    field = gaussian_field(SeededGaussian(7), (1, 100, 1000), mean=0.0, std=2.0)
    assert abs(field.data.mean()) < 0.02
    assert abs(field.data.std() - 2.0) < 0.02
