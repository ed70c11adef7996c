"""
The residual predictor f_theta(x_t, c, t) with hand-written forward and backward passes.

Layout (all convolutions 3x3, replicate padding, im2col + matmul)::

    z    = concat(x_in, cond)          shallow cond-injection (x_in only when sci is off)
    h0   = conv_shallow(z)
    u0   = h0 * (1 + scale(emb_t)) + shift(emb_t)
    a    = silu(u0)
    a    = a + silu(conv_k(a))         k = 0..blocks-1
           + conv_late(cond)           after block 0, only when sci is off
    e0^  = conv_out(a)

``emb_t`` is a sinusoidal embedding of t / T. x_in is x_t, or e_t = x_t - x_T for the
``et`` input variant.

RPDC checkpoint (little-endian)::

    b"RPDC", u32 version = 1, u32 block count
    per block: u16 name length, UTF-8 name, u32 rank, rank x u32 dims, f32 payload

The first block, ``config``, holds (bands, hidden, blocks, emb_dim, sci, input_et).
"""
from __future__ import annotations

import math
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, root_validator, validator

from core.common import CacheError, FormatError, PathLike, ShapeError, validated
from core.logging_module import get_log
from core.tensor_io import ImageTensor, SeededGaussian
from core.wavelet import ConditionSet

_log = get_log(__name__)

RPDC_MAGIC = b"RPDC"
RPDC_VERSION = 1
OUT_INIT_GAIN = 0.1


class DenoiserConfig(BaseModel):
    bands: int
    hidden: int = 32
    blocks: int = 3
    emb_dim: int = 32
    sci: bool = True
    input: str = "xt"

    class Config:
        allow_mutation = False

    @validator("bands", "hidden", "emb_dim")
    def _positive(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1")
        return v

    @validator("emb_dim")
    def _even(cls, v):
        if v % 2:
            raise ValueError("emb_dim must be even")
        return v

    @validator("input")
    def _input(cls, v):
        if v not in ("xt", "et"):
            raise ValueError("input must be 'xt' or 'et'")
        return v

    @root_validator(skip_on_failure=True)
    def _late_injection_needs_a_block(cls, values):
        if not values["sci"] and values["blocks"] < 1:
            raise ValueError("sci=False injects the condition after block 0; blocks must be >= 1")
        if values["blocks"] < 0:
            raise ValueError("blocks must be >= 0")
        return values

    @property
    def cond_channels(self) -> int:
        return ConditionSet.channel_count(self.bands)

    @property
    def shallow_in(self) -> int:
        return self.bands + self.cond_channels if self.sci else self.bands


def denoiser_config(**kwargs) -> DenoiserConfig:
    return validated(DenoiserConfig, "denoiser-trainer", **kwargs)


def parameter_shapes(cfg: DenoiserConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
    shapes["shallow.weight"] = (cfg.hidden, cfg.shallow_in, 3, 3)
    shapes["shallow.bias"] = (cfg.hidden,)
    shapes["time.scale.weight"] = (cfg.emb_dim, cfg.hidden)
    shapes["time.scale.bias"] = (cfg.hidden,)
    shapes["time.shift.weight"] = (cfg.emb_dim, cfg.hidden)
    shapes["time.shift.bias"] = (cfg.hidden,)
    for k in range(cfg.blocks):
        shapes[f"block{k}.weight"] = (cfg.hidden, cfg.hidden, 3, 3)
        shapes[f"block{k}.bias"] = (cfg.hidden,)
    if not cfg.sci:
        shapes["late.weight"] = (cfg.hidden, cfg.cond_channels, 3, 3)
        shapes["late.bias"] = (cfg.hidden,)
    shapes["out.weight"] = (cfg.bands, cfg.hidden, 3, 3)
    shapes["out.bias"] = (cfg.bands,)
    return shapes


def parameter_count(cfg: DenoiserConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(cfg).values())


class DenoiserParams:
    """Named weight blocks plus a version counter that invalidates old caches."""

    def __init__(self, cfg: DenoiserConfig, tensors: "OrderedDict[str, np.ndarray]") -> None:
        expected = parameter_shapes(cfg)
        if list(tensors) != list(expected):
            raise ShapeError("denoiser-trainer", f"parameter blocks {list(tensors)} != {list(expected)}")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ShapeError("denoiser-trainer", f"{name}: {tensors[name].shape} != {shape}")
        self.cfg = cfg
        self.tensors = tensors
        self.version = 0

    @classmethod
    def init(cls, cfg: DenoiserConfig, rng: SeededGaussian) -> "DenoiserParams":
        """Fan-in scaled uniform weights, zero biases."""
        tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, shape in parameter_shapes(cfg).items():
            if name.endswith(".bias"):
                tensors[name] = np.zeros(shape)
                continue
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            bound = 1.0 / math.sqrt(fan_in)
            if name == "out.weight":
                bound *= OUT_INIT_GAIN
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        return cls(cfg, tensors)

    @classmethod
    def zeros(cls, cfg: DenoiserConfig) -> "DenoiserParams":
        return cls(cfg, OrderedDict((n, np.zeros(s)) for n, s in parameter_shapes(cfg).items()))

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.cfg, OrderedDict((n, v.copy()) for n, v in self.tensors.items()))

    def bump(self) -> None:
        self.version += 1

    def count(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def items(self) -> Iterable[Tuple[str, np.ndarray]]:
        return self.tensors.items()


# -- layers ---------------------------------------------------------------


def silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def silu_grad(x: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


def im2col(x: np.ndarray) -> np.ndarray:
    """(Cin, H, W) -> (H*W, Cin*9) with replicate padding."""
    cin, h, w = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(1, 2))
    return windows.transpose(1, 2, 0, 3, 4).reshape(h * w, cin * 9)


def conv_forward(cols: np.ndarray, weight: np.ndarray, bias: np.ndarray, hw: Tuple[int, int]) -> np.ndarray:
    cout = weight.shape[0]
    out = cols @ weight.reshape(cout, -1).T + bias
    return out.T.reshape(cout, *hw)


def conv_backward(
    cols: np.ndarray, weight: np.ndarray, grad_out: np.ndarray, need_input: bool = True
) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Returns (d weight, d bias, d input) for a replicate-padded 3x3 conv."""
    cout, h, w = grad_out.shape
    g = grad_out.reshape(cout, h * w).T
    d_weight = (g.T @ cols).reshape(weight.shape)
    d_bias = g.sum(axis=0)
    if not need_input:
        return d_weight, d_bias, None

    cin = weight.shape[1]
    dcols = (g @ weight.reshape(cout, -1)).reshape(h, w, cin, 3, 3)
    dpad = np.zeros((cin, h + 2, w + 2))
    for i in range(3):
        for j in range(3):
            dpad[:, i : i + h, j : j + w] += dcols[:, :, :, i, j].transpose(2, 0, 1)
    # fold the replicated border back onto the edge pixels
    dpad[:, 1, :] += dpad[:, 0, :]
    dpad[:, h, :] += dpad[:, h + 1, :]
    dpad[:, :, 1] += dpad[:, :, 0]
    dpad[:, :, w] += dpad[:, :, w + 1]
    return d_weight, d_bias, dpad[:, 1 : h + 1, 1 : w + 1]


def timestep_embedding(t: int, T: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    arg = (t / T) * 1000.0 * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)])


# -- network --------------------------------------------------------------


class ForwardCache:
    __slots__ = ("version", "hw", "cols0", "h0", "emb", "scale", "u0", "block_cols", "block_pre", "late_cols", "out_cols")

    def __init__(self, version: int, hw: Tuple[int, int]) -> None:
        self.version = version
        self.hw = hw
        self.block_cols: List[np.ndarray] = []
        self.block_pre: List[np.ndarray] = []
        self.late_cols = None


def _network_input(params: DenoiserParams, x_t: ImageTensor, cond: ConditionSet) -> np.ndarray:
    cfg = params.cfg
    if x_t.bands != cfg.bands:
        raise ShapeError("denoiser-trainer", f"x_t has {x_t.bands} bands, network expects {cfg.bands}")
    if cond.stack.shape[1:] != x_t.shape[1:] or cond.channels != cfg.cond_channels:
        raise ShapeError(
            "denoiser-trainer",
            f"condition {cond.stack.shape} incompatible with x_t {x_t.shape}",
        )
    x_in = x_t.data - cond.lrms.data if cfg.input == "et" else x_t.data
    if cfg.sci:
        return np.concatenate([x_in, cond.stack.data], axis=0)
    return x_in


def forward(
    params: DenoiserParams, x_t: ImageTensor, cond: ConditionSet, t: int, T: int
) -> Tuple[ImageTensor, ForwardCache]:
    cfg = params.cfg
    z = _network_input(params, x_t, cond)
    hw = x_t.shape[1:]
    cache = ForwardCache(params.version, hw)

    cache.cols0 = im2col(z)
    cache.h0 = conv_forward(cache.cols0, params["shallow.weight"], params["shallow.bias"], hw)
    cache.emb = timestep_embedding(t, T, cfg.emb_dim)
    scale = cache.emb @ params["time.scale.weight"] + params["time.scale.bias"]
    shift = cache.emb @ params["time.shift.weight"] + params["time.shift.bias"]
    cache.scale = scale
    cache.u0 = cache.h0 * (1.0 + scale)[:, None, None] + shift[:, None, None]
    a = silu(cache.u0)

    for k in range(cfg.blocks):
        cols = im2col(a)
        pre = conv_forward(cols, params[f"block{k}.weight"], params[f"block{k}.bias"], hw)
        cache.block_cols.append(cols)
        cache.block_pre.append(pre)
        a = a + silu(pre)
        if k == 0 and not cfg.sci:
            cache.late_cols = im2col(cond.stack.data)
            a = a + conv_forward(cache.late_cols, params["late.weight"], params["late.bias"], hw)

    cache.out_cols = im2col(a)
    out = conv_forward(cache.out_cols, params["out.weight"], params["out.bias"], hw)
    return ImageTensor(out), cache


def backward(
    params: DenoiserParams,
    cache: ForwardCache,
    grad_out: ImageTensor,
    frozen: Iterable[str] = (),
) -> "OrderedDict[str, np.ndarray]":
    """Gradients of every parameter block; names in ``frozen`` get exact zeros."""
    if cache.version != params.version:
        raise CacheError("denoiser-trainer", f"cache from params v{cache.version}, now v{params.version}")
    cfg = params.cfg
    if grad_out.shape != (cfg.bands, *cache.hw):
        raise ShapeError("denoiser-trainer", f"grad_out {grad_out.shape} vs output {(cfg.bands, *cache.hw)}")

    grads: Dict[str, np.ndarray] = {}
    grads["out.weight"], grads["out.bias"], da = conv_backward(cache.out_cols, params["out.weight"], grad_out.data)

    for k in range(cfg.blocks - 1, -1, -1):
        if k == 0 and not cfg.sci:
            grads["late.weight"], grads["late.bias"], _ = conv_backward(
                cache.late_cols, params["late.weight"], da, need_input=False
            )
        dpre = da * silu_grad(cache.block_pre[k])
        grads[f"block{k}.weight"], grads[f"block{k}.bias"], da_in = conv_backward(
            cache.block_cols[k], params[f"block{k}.weight"], dpre
        )
        da = da + da_in

    du0 = da * silu_grad(cache.u0)
    dh0 = du0 * (1.0 + cache.scale)[:, None, None]
    dscale = np.sum(du0 * cache.h0, axis=(1, 2))
    dshift = np.sum(du0, axis=(1, 2))
    grads["time.scale.weight"] = np.outer(cache.emb, dscale)
    grads["time.scale.bias"] = dscale
    grads["time.shift.weight"] = np.outer(cache.emb, dshift)
    grads["time.shift.bias"] = dshift
    grads["shallow.weight"], grads["shallow.bias"], _ = conv_backward(
        cache.cols0, params["shallow.weight"], dh0, need_input=False
    )

    frozen = set(frozen)
    ordered: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, value in params.items():
        ordered[name] = np.zeros_like(value) if name in frozen else grads[name]
    return ordered


class DenoiserPredictor:
    """Binds params and the schedule length into the Predictor call signature."""

    def __init__(self, params: DenoiserParams, T: int) -> None:
        self.params = params
        self.T = T
        self.calls = 0

    def __call__(self, x_t: ImageTensor, cond: ConditionSet, t: int) -> ImageTensor:
        self.calls += 1
        return forward(self.params, x_t, cond, t, self.T)[0]


def oracle_predictor(x_0_true: ImageTensor):
    """Predicts the true residual x_0 - x_T whatever the state and step."""

    def predict(x_t: ImageTensor, cond: ConditionSet, t: int) -> ImageTensor:
        return x_0_true.sub(cond.lrms)

    return predict


# -- checkpoint -----------------------------------------------------------


def _config_vector(cfg: DenoiserConfig) -> np.ndarray:
    return np.array(
        [cfg.bands, cfg.hidden, cfg.blocks, cfg.emb_dim, int(cfg.sci), int(cfg.input == "et")],
        dtype=np.float64,
    )


def encode_checkpoint(params: DenoiserParams) -> bytes:
    blocks = [("config", _config_vector(params.cfg))] + list(params.items())
    out = [struct.pack("<4sII", RPDC_MAGIC, RPDC_VERSION, len(blocks))]
    for name, value in blocks:
        raw_name = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw_name)))
        out.append(raw_name)
        out.append(struct.pack("<I", value.ndim))
        out.append(struct.pack(f"<{value.ndim}I", *value.shape))
        out.append(np.ascontiguousarray(value).astype("<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, raw: bytes) -> None:
        self.raw = raw
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise FormatError("denoiser-trainer", "truncated checkpoint", self.pos)
        values = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return values

    def bytes(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError("denoiser-trainer", "truncated checkpoint", self.pos)
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk


def decode_checkpoint(raw: bytes) -> DenoiserParams:
    reader = _Reader(raw)
    magic, version, count = reader.take("<4sII")
    if magic != RPDC_MAGIC:
        raise FormatError("denoiser-trainer", f"bad magic {magic!r}, expected {RPDC_MAGIC!r}", 0)
    if version != RPDC_VERSION:
        raise FormatError("denoiser-trainer", f"unsupported version {version}", 4)

    blocks: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        start = reader.pos
        (name_len,) = reader.take("<H")
        try:
            name = reader.bytes(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError("denoiser-trainer", "block name is not UTF-8", start + 2) from e
        (rank,) = reader.take("<I")
        dims = reader.take(f"<{rank}I")
        n = int(np.prod(dims)) if rank else 1
        payload_at = reader.pos
        values = np.frombuffer(reader.bytes(4 * n), dtype="<f4")
        if not np.all(np.isfinite(values)):
            raise FormatError("denoiser-trainer", f"non-finite weight in {name}", payload_at)
        blocks[name] = values.astype(np.float64).reshape(dims)
    if reader.pos != len(raw):
        raise FormatError("denoiser-trainer", "trailing bytes after last block", reader.pos)

    if "config" not in blocks:
        raise FormatError("denoiser-trainer", "missing config block", 12)
    bands, hidden, n_blocks, emb_dim, sci, input_et = (int(v) for v in blocks.pop("config"))
    cfg = denoiser_config(
        bands=bands, hidden=hidden, blocks=n_blocks, emb_dim=emb_dim, sci=bool(sci), input="et" if input_et else "xt"
    )
    return DenoiserParams(cfg, blocks)


def save_checkpoint(params: DenoiserParams, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(params))
    _log.info(f"Saved checkpoint ({params.count()} parameters) to {path}")


def load_checkpoint(path: PathLike) -> DenoiserParams:
    params = decode_checkpoint(Path(path).read_bytes())
    _log.debug(f"Loaded {params.cfg!r} from {path}")
    return params
