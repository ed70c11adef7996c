"""
Dense multi-band rasters and their on-disk format.

``ImageTensor`` is the carrier for every image quantity in the engine (HRMS, LRMS,
PAN, residuals, latent states and condition stacks). Data is held as a float64
array of shape ``(C, H, W)``: planar, band-major, row-major within a band.

MBIF layout (little-endian)::

    bytes 0-3   b"MBI1"
    u32         version = 1
    u32 x 3     C, H, W
    f32 x CHW   payload, band-major, row-major within band

Values read from MBIF are float32-exact, so a read/write/read cycle is bit-exact.
Writing a tensor that holds values outside float32 rounds them to nearest.

Normal variates come from numpy's ``Generator(PCG64(seed))`` and its ziggurat
``standard_normal``. PCG64 carries a 128-bit LCG state advanced with 64-bit
outputs; the same seed yields the same integer stream on every platform, and the
ziggurat conversion is a single fixed algorithm. Worker streams are derived with
``SeedSequence(seed, spawn_key=(index,))`` which hashes (master seed, worker index)
into an independent PCG64 state.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from core.common import ArgumentError, FormatError, PathLike, ShapeError
from core.logging_module import get_log

_log = get_log(__name__)

MBIF_MAGIC = b"MBI1"
MBIF_VERSION = 1
_HEADER = struct.Struct("<4sIIII")

Shape = Tuple[int, int, int]


class ImageTensor:
    """C x H x W float raster. Treat as immutable once built."""

    __slots__ = ("_data",)

    def __init__(self, data: np.ndarray) -> None:
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeError("tensor-io", f"expected a non-empty C x H x W array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ArgumentError("tensor-io", "ImageTensor data must be finite")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        self._data = arr

    # -- construction ---------------------------------------------------
    @classmethod
    def full(cls, shape: Shape, value: float) -> "ImageTensor":
        return cls(np.full(shape, float(value)))

    @classmethod
    def zeros(cls, shape: Shape) -> "ImageTensor":
        return cls(np.zeros(shape))

    # -- accessors ------------------------------------------------------
    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Shape:
        return self._data.shape  # type: ignore[return-value]

    @property
    def bands(self) -> int:
        return self._data.shape[0]

    @property
    def height(self) -> int:
        return self._data.shape[1]

    @property
    def width(self) -> int:
        return self._data.shape[2]

    @property
    def size(self) -> int:
        return self._data.size

    def band(self, index: int) -> "ImageTensor":
        return ImageTensor(self._data[index : index + 1])

    def quantized(self) -> "ImageTensor":
        """Rounds every element to float32, the precision MBIF stores."""
        return ImageTensor(self._data.astype(np.float32).astype(np.float64))

    # -- arithmetic -----------------------------------------------------
    def _check(self, other: "ImageTensor", op: str) -> None:
        if self.shape != other.shape:
            raise ShapeError("tensor-io", f"{op}: {self.shape} vs {other.shape}")

    def add(self, other: "ImageTensor") -> "ImageTensor":
        self._check(other, "add")
        return ImageTensor(self._data + other._data)

    def sub(self, other: "ImageTensor") -> "ImageTensor":
        self._check(other, "sub")
        return ImageTensor(self._data - other._data)

    def scale(self, factor: float) -> "ImageTensor":
        return ImageTensor(self._data * float(factor))

    def clamp(self, lo: float = 0.0, hi: float = 1.0) -> "ImageTensor":
        return ImageTensor(np.clip(self._data, lo, hi))

    def band_mean(self) -> np.ndarray:
        return self._data.mean(axis=(1, 2))

    def band_min(self) -> np.ndarray:
        return self._data.min(axis=(1, 2))

    def band_max(self) -> np.ndarray:
        return self._data.max(axis=(1, 2))

    def __add__(self, other: "ImageTensor") -> "ImageTensor":
        return self.add(other)

    def __sub__(self, other: "ImageTensor") -> "ImageTensor":
        return self.sub(other)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._data, other._data)

    def __hash__(self) -> int:
        return hash((self.shape, self._data.tobytes()))

    def __repr__(self) -> str:
        return f"ImageTensor(bands={self.bands}, height={self.height}, width={self.width})"


def mse(a: ImageTensor, b: ImageTensor) -> float:
    """Global mean squared error over every element."""
    if a.shape != b.shape:
        raise ShapeError("tensor-io", f"mse: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    return float(np.mean(diff * diff))


def concat(tensors: Sequence[ImageTensor]) -> ImageTensor:
    """Stacks tensors sharing H x W along the band axis."""
    hw = {t.shape[1:] for t in tensors}
    if len(hw) != 1:
        raise ShapeError("tensor-io", f"concat needs equal H x W, got {sorted(hw)}")
    return ImageTensor(np.concatenate([t.data for t in tensors], axis=0))


class SeededGaussian:
    """Single-owner stream of standard-normal draws."""

    def __init__(self, seed: int = 0, spawn_key: Tuple[int, ...] = ()) -> None:
        if seed < 0 or seed >= 2**64:
            raise ArgumentError("tensor-io", f"seed {seed} is not a 64-bit unsigned integer")
        self.seed = int(seed)
        self.spawn_key = tuple(spawn_key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.spawn_key))
        )

    def child(self, index: int) -> "SeededGaussian":
        """Independent stream for worker ``index``; depends only on (seed, key, index)."""
        return SeededGaussian(self.seed, self.spawn_key + (int(index),))

    def normal(self, shape: Union[int, Tuple[int, ...]]) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def integers(self, low: int, high: int, size: Optional[int] = None):
        """Uniform integers on [low, high]."""
        return self._gen.integers(low, high, size=size, endpoint=True)

    def uniform(self, low: float, high: float, size=None):
        return self._gen.uniform(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def gaussian_field(rng: SeededGaussian, shape: Shape, mean: float = 0.0, std: float = 1.0) -> ImageTensor:
    """i.i.d. ``mean + std * xi`` over a C x H x W grid."""
    if std < 0:
        raise ArgumentError("tensor-io", f"std must be >= 0, got {std}")
    if std == 0:
        return ImageTensor.full(shape, mean)
    return ImageTensor(mean + std * rng.normal(shape))


# -- band filters ---------------------------------------------------------


def filter_bands(img: ImageTensor, kernel: np.ndarray) -> ImageTensor:
    """Correlates every band with a 2D ``kernel`` under replicate padding (odd kernel sizes)."""
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ArgumentError("tensor-io", f"kernel sides must be odd, got {kernel.shape}")
    ph, pw = kh // 2, kw // 2
    padded = np.pad(img.data, ((0, 0), (ph, ph), (pw, pw)), mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    return ImageTensor(np.einsum("chwij,ij->chw", windows, kernel))


def nearest_upsample(img: ImageTensor, factor: int) -> ImageTensor:
    data = np.repeat(np.repeat(img.data, factor, axis=1), factor, axis=2)
    return ImageTensor(data)


# -- MBIF -----------------------------------------------------------------


def encode_mbif(t: ImageTensor) -> bytes:
    header = _HEADER.pack(MBIF_MAGIC, MBIF_VERSION, t.bands, t.height, t.width)
    return header + t.data.astype("<f4").tobytes(order="C")


def decode_mbif(raw: bytes) -> ImageTensor:
    if len(raw) < 4 or raw[:4] != MBIF_MAGIC:
        raise FormatError("tensor-io", f"bad magic {raw[:4]!r}, expected {MBIF_MAGIC!r}", 0)
    if len(raw) < _HEADER.size:
        raise FormatError("tensor-io", "truncated header", len(raw))
    _, version, c, h, w = _HEADER.unpack_from(raw, 0)
    if version != MBIF_VERSION:
        raise FormatError("tensor-io", f"unsupported version {version}", 4)
    if min(c, h, w) < 1:
        raise FormatError("tensor-io", f"empty dimensions {c}x{h}x{w}", 8)
    expected = _HEADER.size + 4 * c * h * w
    if len(raw) < expected:
        raise FormatError(
            "tensor-io", f"truncated payload: need {expected} bytes, have {len(raw)}", len(raw)
        )
    if len(raw) > expected:
        raise FormatError("tensor-io", f"{len(raw) - expected} trailing bytes", expected)
    payload = np.frombuffer(raw, dtype="<f4", count=c * h * w, offset=_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(payload))
    if bad.size:
        raise FormatError("tensor-io", "non-finite value in payload", _HEADER.size + 4 * int(bad[0]))
    return ImageTensor(payload.astype(np.float64).reshape(c, h, w))


def read_mbif(path: PathLike) -> ImageTensor:
    raw = Path(path).read_bytes()
    try:
        return decode_mbif(raw)
    except FormatError:
        _log.error(f"Unable to parse {path}")
        raise


def write_mbif(t: ImageTensor, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_mbif(t))
    _log.debug(f"Wrote {t!r} to {path}")
