"""Hyperspectral cubes: HSC1 file format, patch extraction, synthetic scenes.

The synthetic generator follows the linear mixing model: every pixel is an
abundance-weighted sum of endmember spectra plus white noise. The target
domain reuses the source endmembers after a sensor-style transform (gain
curve, spectral-response blur, channel subsampling, illumination scale),
so the shift between the two scenes is known exactly.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

MAGIC = b"HSC1"
_HEADER = struct.Struct("<4sIIIB")


class CubeFormatError(ValueError):
    """Malformed or inconsistent HSC1 file."""


@dataclass
class HyperCube:
    """A (C, H, W) band-sequential cube with optional (H, W) integer labels.

    Label 0 marks unlabeled pixels; classes are 1..N.
    """

    values: np.ndarray
    labels: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError(f"cube values must be (C, H, W), got shape {self.values.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != self.values.shape[1:]:
                raise ValueError(f"labels shape {self.labels.shape} does not match cube {self.values.shape[1:]}")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def num_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max(initial=0))


def write_cube(cube: HyperCube, path) -> None:
    """Write HSC1: header, float32 band-sequential payload, optional int32 labels."""
    path = Path(path)
    C, H, W = cube.values.shape
    flags = 1 if cube.labels is not None else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, H, W, C, flags))
        fh.write(cube.values.astype("<f4").tobytes())
        if cube.labels is not None:
            fh.write(cube.labels.astype("<i4").tobytes())


def read_cube(path) -> HyperCube:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise CubeFormatError(f"{path}: file too short for an HSC1 header ({len(raw)} bytes)")
    magic, H, W, C, flags = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CubeFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    n = H * W * C
    off = _HEADER.size
    expected = off + 4 * n + (4 * H * W if flags & 1 else 0)
    if len(raw) < expected:
        raise CubeFormatError(f"{path}: truncated payload ({len(raw)} bytes, expected {expected})")
    if len(raw) > expected:
        raise CubeFormatError(f"{path}: {len(raw) - expected} trailing bytes; label flag or shape is inconsistent")
    values = np.frombuffer(raw, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(C, H, W)
    labels = None
    if flags & 1:
        labels = np.frombuffer(raw, dtype="<i4", count=H * W, offset=off + 4 * n).astype(np.int64).reshape(H, W)
    return HyperCube(values, labels, path.stem)


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------

def labeled_coords(cube: HyperCube) -> np.ndarray:
    """(N, 2) row/col coordinates of labeled pixels in row-major order."""
    if cube.labels is None:
        return np.zeros((0, 2), dtype=np.int64)
    return np.argwhere(cube.labels > 0)


def extract_patches(cube: HyperCube, patch_size: int = 13, coords: Optional[np.ndarray] = None):
    """Square patches centred on ``coords`` (default: every labeled pixel).

    Borders are mirror padded. Returns (patches (N, C, p, p), labels (N,),
    coords (N, 2)); labels are the centre pixel's cube label (0 when the
    cube has no labels).
    """
    if patch_size % 2 == 0 or patch_size < 1:
        raise ValueError(f"patch_size must be a positive odd number, got {patch_size}")
    if coords is None:
        coords = labeled_coords(cube)
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    r = patch_size // 2
    padded = np.pad(cube.values, ((0, 0), (r, r), (r, r)), mode="symmetric" if min(cube.values.shape[1:]) <= r else "reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (patch_size, patch_size), axis=(1, 2))
    patches = np.ascontiguousarray(windows[:, coords[:, 0], coords[:, 1]].transpose(1, 0, 2, 3))
    labels = (cube.labels[coords[:, 0], coords[:, 1]] if cube.labels is not None
              else np.zeros(len(coords), dtype=np.int64))
    return patches, labels, coords


def split_dataset(labels: np.ndarray, train_fraction: float, rng: np.random.Generator):
    """Stratified (train_idx, heldout_idx) over patch indices."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    labels = np.asarray(labels)
    train, held = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < 2:
            raise ValueError(f"class {c} has {idx.size} patch(es); at least 2 are needed to split")
        idx = rng.permutation(idx)
        n_train = int(np.clip(round(train_fraction * idx.size), 1, idx.size - 1))
        train.append(idx[:n_train])
        held.append(idx[n_train:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(held))


def cap_per_class(labels: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    """Indices keeping at most ``cap`` randomly chosen patches per class."""
    keep = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size > cap:
            idx = rng.choice(idx, cap, replace=False)
        keep.append(idx)
    return np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

@dataclass
class SceneSpec:
    num_classes: int = 3
    num_endmembers: int = 4
    channels: int = 64
    height: int = 64
    width: int = 64
    smoothness: float = 4.0
    sharpness: float = 4.0
    noise: float = 0.01
    gain_amplitude: float = 0.1
    gain_cycles: float = 1.5
    blur_width: float = 1.5
    subsample_fraction: float = 0.75
    illumination: float = 1.15
    fresh_target_abundance: bool = True

    def __post_init__(self):
        if not 0 < self.subsample_fraction <= 1:
            raise ValueError(f"subsample_fraction must be in (0, 1], got {self.subsample_fraction}")
        if self.noise < 0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")
        if self.num_endmembers < 1 or self.num_classes < 1:
            raise ValueError("num_endmembers and num_classes must be positive")
        if self.num_classes > self.num_endmembers:
            raise ValueError(f"num_classes ({self.num_classes}) cannot exceed num_endmembers ({self.num_endmembers})")
        if self.channels < 2:
            raise ValueError(f"channels must be at least 2, got {self.channels}")

    @property
    def target_channels(self) -> int:
        return max(2, int(round(self.subsample_fraction * self.channels)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown scene keys: {sorted(unknown)}")
        return cls(**d)


def random_endmembers(num: int, channels: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth spectra: sums of 3-5 Gaussian bumps, scaled to a peak of 1."""
    axis = np.arange(channels, dtype=np.float64)
    out = np.zeros((num, channels))
    for e in range(num):
        for _ in range(int(rng.integers(3, 6))):
            centre = rng.uniform(0, channels)
            width = rng.uniform(channels / 20, channels / 5)
            out[e] += rng.uniform(0.2, 1.0) * np.exp(-((axis - centre) ** 2) / (2 * width ** 2))
        out[e] /= out[e].max()
    return out


def abundance_maps(num: int, height: int, width: int, smoothness: float, sharpness: float,
                   rng: np.random.Generator) -> np.ndarray:
    """(num, H, W) softmax over smoothed unit-variance random fields."""
    fields_ = np.stack([gaussian_filter(rng.standard_normal((height, width)), smoothness, mode="wrap")
                        for _ in range(num)])
    fields_ /= fields_.std(axis=(1, 2), keepdims=True) + 1e-12
    z = sharpness * fields_
    z -= z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def sensor_transform(endmembers: np.ndarray, spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Apply gain curve, spectral blur, channel subsampling and illumination.

    Returns (transformed endmembers, kept channel indices).
    """
    C = endmembers.shape[1]
    phase = np.arange(C) / C
    gain = 1.0 + spec.gain_amplitude * np.sin(2 * np.pi * spec.gain_cycles * phase)
    out = endmembers * gain
    if spec.blur_width > 0:
        out = gaussian_filter1d(out, spec.blur_width, axis=1, mode="nearest")
    idx = np.round(np.linspace(0, C - 1, spec.target_channels)).astype(np.int64)
    return out[:, idx] * spec.illumination, idx


def render_scene(endmembers: np.ndarray, spec: SceneSpec, rng: np.random.Generator, name: str) -> HyperCube:
    abund = abundance_maps(spec.num_endmembers, spec.height, spec.width, spec.smoothness, spec.sharpness, rng)
    values = np.tensordot(endmembers, abund, axes=([0], [0]))  # (C, H, W)
    if spec.noise > 0:
        values = values + spec.noise * rng.standard_normal(values.shape)
    values = np.clip(values, 0.0, 1.0).astype(np.float32).astype(np.float64)
    top = abund.argmax(axis=0)
    labels = np.where((abund.max(axis=0) > 0.5) & (top < spec.num_classes), top + 1, 0)
    return HyperCube(values, labels, name)


def synthesize_scene(spec: SceneSpec, rng: np.random.Generator) -> tuple[HyperCube, HyperCube]:
    """Source and shifted target cubes sharing endmembers and class semantics."""
    endmembers = random_endmembers(spec.num_endmembers, spec.channels, rng)
    src_seed, tgt_seed = rng.integers(0, 2 ** 63, size=2)
    if not spec.fresh_target_abundance:
        tgt_seed = src_seed
    source = render_scene(endmembers, spec, np.random.default_rng(src_seed), "source")
    shifted, _ = sensor_transform(endmembers, spec)
    target = render_scene(shifted, spec, np.random.default_rng(tgt_seed), "target")
    return source, target
