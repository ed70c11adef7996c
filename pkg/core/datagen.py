"""
Synthetic reduced-resolution scenes: (HRMS, LRMS, PAN) triples built by degrading a
smooth multi-band field, so training and evaluation need no external data.

    x_0 = clamp(base + sum_k amp_k[c] * bump_k)          bands share bump locations
    y   = sum_c w_c * x_0[c]                             PAN on the weight simplex
    x_T = nearest_up(decimate(blur(x_0, sigma), s), s)   pre-upsampled LRMS

Blur is a 3-sigma truncated Gaussian, normalised to sum 1 and replicate padded, so
constants pass through blur, decimation and upsampling unchanged.
"""
from __future__ import annotations

import math
import sys
import threading
from pathlib import Path
from typing import List, NamedTuple, Optional

import numpy as np
from alive_progress import alive_bar
from pydantic import BaseModel, validator

from core.common import DatasetError, PathLike, map_in_threads, validated
from core.logging_module import get_log
from core.tensor_io import ImageTensor, SeededGaussian, filter_bands, nearest_upsample, read_mbif, write_mbif

_log = get_log(__name__)

MANIFEST_NAME = "manifest.json"


class SceneConfig(BaseModel):
    size: int = 32
    bands: int = 4
    blobs: int = 6
    blur_sigma: float = 1.0
    scale: int = 4
    base: float = 0.1
    pan_weights: Optional[List[float]] = None
    seed: int = 0

    class Config:
        allow_mutation = False

    @validator("size", "bands", "scale")
    def _positive(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1")
        return v

    @validator("blobs", "seed")
    def _non_negative(cls, v, field):
        if v < 0:
            raise ValueError(f"{field.name} must be >= 0")
        return v

    @validator("blur_sigma")
    def _sigma(cls, v):
        if v < 0:
            raise ValueError("blur_sigma must be >= 0")
        return v

    @validator("scale")
    def _divides(cls, v, values):
        if "size" in values and values["size"] % v:
            raise ValueError(f"size {values['size']} is not divisible by scale {v}")
        return v

    @validator("pan_weights", always=True)
    def _simplex(cls, v, values):
        bands = values.get("bands")
        if bands is None:
            return v
        if v is None:
            return [1.0 / bands] * bands
        if len(v) != bands:
            raise ValueError(f"need {bands} pan weights, got {len(v)}")
        if any(w < 0 for w in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("pan weights must be nonnegative and sum to 1")
        return v


class Scene(NamedTuple):
    hrms: ImageTensor
    lrms: ImageTensor
    pan: ImageTensor


class SceneFiles(NamedTuple):
    name: str
    hrms: str
    lrms: str
    pan: str


class DatasetManifest(BaseModel):
    count: int
    scene: SceneConfig
    scenes: List[SceneFiles]


def scene_config(**kwargs) -> SceneConfig:
    return validated(SceneConfig, "datagen", **kwargs)


def gaussian_kernel(sigma: float) -> np.ndarray:
    if sigma == 0:
        return np.ones((1, 1))
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    k /= k.sum()
    return np.outer(k, k)


def degrade(hrms: ImageTensor, blur_sigma: float, scale: int) -> ImageTensor:
    """Blur, keep the top-left sample of each scale x scale block, nearest-upsample back."""
    blurred = filter_bands(hrms, gaussian_kernel(blur_sigma))
    decimated = ImageTensor(blurred.data[:, ::scale, ::scale])
    return nearest_upsample(decimated, scale)


def generate_scene(cfg: SceneConfig, rng: Optional[SeededGaussian] = None) -> Scene:
    rng = SeededGaussian(cfg.seed) if rng is None else rng
    n = cfg.size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)

    data = np.full((cfg.bands, n, n), cfg.base)
    for _ in range(cfg.blobs):
        cy, cx = rng.uniform(0, n, size=2)
        sigma = rng.uniform(1.5, max(2.0, n / 4.0))
        amp = rng.uniform(0.05, 0.5, size=cfg.bands)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma * sigma))
        data += amp[:, None, None] * bump[None]
    hrms = ImageTensor(np.clip(data, 0.0, 1.0))

    weights = np.asarray(cfg.pan_weights)
    pan = ImageTensor(np.tensordot(weights, hrms.data, axes=1)[None])
    lrms = degrade(hrms, cfg.blur_sigma, cfg.scale)
    return Scene(hrms, lrms, pan)


def generate_dataset(
    out_dir: PathLike, count: int, cfg: SceneConfig, threads: int = 1, quiet: bool = False
) -> DatasetManifest:
    """Writes ``count`` triples as NNN_{hrms,lrms,pan}.mbif plus manifest.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    master = SeededGaussian(cfg.seed)

    def build(index: int) -> SceneFiles:
        scene = generate_scene(cfg, master.child(index))
        files = SceneFiles(
            f"{index:03d}", f"{index:03d}_hrms.mbif", f"{index:03d}_lrms.mbif", f"{index:03d}_pan.mbif"
        )
        write_mbif(scene.hrms, out_dir / files.hrms)
        write_mbif(scene.lrms, out_dir / files.lrms)
        write_mbif(scene.pan, out_dir / files.pan)
        return files

    lock = threading.Lock()
    with alive_bar(count, title="Generating scenes:", file=sys.stderr, disable=quiet or count == 0) as bar:

        def tracked(index: int) -> SceneFiles:
            files = build(index)
            with lock:
                bar()
            return files

        scenes = map_in_threads(tracked, list(range(count)), threads)

    manifest = DatasetManifest(count=count, scene=cfg, scenes=scenes)
    (out_dir / MANIFEST_NAME).write_text(manifest.json(indent=2) + "\n")
    _log.info(f"Wrote {count} scenes to {out_dir}")
    return manifest


def list_scenes(data_dir: PathLike) -> List[SceneFiles]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DatasetError("datagen", f"{data_dir} is not a directory")
    manifest = data_dir / MANIFEST_NAME
    if manifest.exists():
        return list(DatasetManifest.parse_file(manifest).scenes)

    scenes = []
    for hrms in sorted(data_dir.glob("*_hrms.mbif")):
        name = hrms.name[: -len("_hrms.mbif")]
        scenes.append(SceneFiles(name, hrms.name, f"{name}_lrms.mbif", f"{name}_pan.mbif"))
    return scenes


def load_dataset(data_dir: PathLike) -> List[Scene]:
    data_dir = Path(data_dir)
    files = list_scenes(data_dir)
    if not files:
        raise DatasetError("datagen", f"empty dataset in {data_dir}")
    scenes = []
    for f in files:
        for part in (f.hrms, f.lrms, f.pan):
            if not (data_dir / part).exists():
                raise DatasetError("datagen", f"scene {f.name} is missing {part}")
        scenes.append(Scene(read_mbif(data_dir / f.hrms), read_mbif(data_dir / f.lrms), read_mbif(data_dir / f.pan)))
    _log.debug(f"Loaded {len(scenes)} scenes from {data_dir}")
    return scenes
