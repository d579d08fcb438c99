"""Classification scores and realism/diversity measures for generated cubes."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .classifier import resample_array
from .data import HyperCube
from .sscom import ssim as _ssim
from .tensor import Tensor, no_grad

PSNR_CAP = 99.0
PSNR_MSE_FLOOR = 1e-10


def confusion(preds, labels, n: int) -> np.ndarray:
    """(n, n) counts; rows are true classes, columns predictions."""
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.shape != labels.shape:
        raise ValueError(f"preds ({preds.size}) and labels ({labels.size}) differ in length")
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise ValueError(f"{name} class out of range [0, {n}): [{arr.min()}, {arr.max()}]")
    cm = np.zeros((n, n), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def _check(cm: np.ndarray) -> np.ndarray:
    cm = np.asarray(cm)
    if cm.sum() <= 0:
        raise ValueError("confusion matrix is empty")
    return cm


def overall_accuracy(cm) -> float:
    cm = _check(cm)
    return float(np.trace(cm) / cm.sum())


def weighted_f1(cm) -> float:
    """Support-weighted F1; a class with precision + recall = 0 scores 0."""
    cm = _check(cm).astype(np.float64)
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(np.sum(support / cm.sum() * f1))


def kappa(cm) -> float:
    """Cohen's kappa. With chance agreement 1 it is 1 for perfect agreement, else 0."""
    cm = _check(cm).astype(np.float64)
    total = cm.sum()
    p_o = np.trace(cm) / total
    p_e = float(np.sum(cm.sum(axis=0) * cm.sum(axis=1)) / total ** 2)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def sam(a, b) -> float:
    """Spectral angle (radians) between two spectra of equal length."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("spectral angle undefined for a zero spectrum")
    return float(_half_angle(a / na, b / nb, axis=0))


def _half_angle(ua: np.ndarray, ub: np.ndarray, axis: int) -> np.ndarray:
    # 2 atan2(|u - v|, |u + v|) keeps full precision near 0 and pi, unlike arccos
    return 2.0 * np.arctan2(np.linalg.norm(ua - ub, axis=axis), np.linalg.norm(ua + ub, axis=axis))


def align_channels(a: np.ndarray, b: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Resample the shorter spectral axis onto the longer one."""
    ka, kb = a.shape[axis], b.shape[axis]
    if ka < kb:
        a = resample_array(a, kb, axis)
    elif kb < ka:
        b = resample_array(b, ka, axis)
    return a, b


def sam_map(cube_a: np.ndarray, cube_b: np.ndarray) -> np.ndarray:
    """Per-pixel spectral angle for two (C, H, W) arrays; NaN where a spectrum is zero."""
    a, b = align_channels(np.asarray(cube_a, float), np.asarray(cube_b, float))
    na, nb = np.linalg.norm(a, axis=0), np.linalg.norm(b, axis=0)
    out = np.full(na.shape, np.nan)
    ok = (na > 0) & (nb > 0)
    out[ok] = _half_angle(a[:, ok] / na[ok], b[:, ok] / nb[ok], axis=0)
    return out


def sam_stats(cube_a, cube_b, mask: Optional[np.ndarray] = None) -> tuple[float, float, int]:
    """(mean, std, skipped) of spectral angles over the masked pixels.

    ``mask`` defaults to the labeled pixels of ``cube_a`` when it is a
    HyperCube with labels, otherwise every pixel. Pixels with a zero spectrum
    are skipped and counted.
    """
    if mask is None and isinstance(cube_a, HyperCube) and cube_a.labels is not None:
        mask = cube_a.labels > 0
    a = cube_a.values if isinstance(cube_a, HyperCube) else cube_a
    b = cube_b.values if isinstance(cube_b, HyperCube) else cube_b
    angles = sam_map(a, b)
    if mask is not None:
        angles = angles[np.asarray(mask, dtype=bool)]
    angles = angles.reshape(-1)
    valid = angles[~np.isnan(angles)]
    skipped = int(angles.size - valid.size)
    if valid.size == 0:
        return float("nan"), float("nan"), skipped
    return float(valid.mean()), float(valid.std()), skipped


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB, capped at 99 dB when MSE < 1e-10."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    err = float(np.mean((a - b) ** 2))
    if err < PSNR_MSE_FLOOR:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / err))


def image_ssim(a, b) -> float:
    """SSIM of two 2-D images (same windowing as the training loss)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    with no_grad():
        return _ssim(Tensor(a[None, None]), Tensor(b[None, None])).item()


def gray(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).mean(axis=0)


def pseudo_color(values: np.ndarray, bands: Sequence[int]) -> np.ndarray:
    """(H, W, 3) float image from three band indices of a (C, H, W) array."""
    return np.stack([values[b] for b in bands], axis=-1)


def scaled_bands(bands: Sequence[int], ref_channels: int, channels: int) -> list[int]:
    """Map band indices chosen for ``ref_channels`` onto a cube with ``channels`` bands."""
    if ref_channels <= 1:
        return [0 for _ in bands]
    return [int(round(b * (channels - 1) / (ref_channels - 1))) for b in bands]


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary P6 image from an (H, W, 3) float array in [0, 1]."""
    img = np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    H, W, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    W, H = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: W * H * 3], dtype=np.uint8).reshape(H, W, 3)


@dataclass
class EvalReport:
    oa: float = float("nan")
    f1_weighted: float = float("nan")
    kappa: float = float("nan")
    sam_mean: float = float("nan")
    sam_std: float = float("nan")
    psnr: float = float("nan")
    ssim: float = float("nan")

    @classmethod
    def from_confusion(cls, cm) -> "EvalReport":
        return cls(oa=overall_accuracy(cm), f1_weighted=weighted_f1(cm), kappa=kappa(cm))

    def as_dict(self) -> dict:
        return asdict(self)


EVAL_FIELDS = [f.name for f in fields(EvalReport)]


def append_eval_row(path, report: EvalReport, **extra) -> None:
    """Append one row to an eval CSV, writing the header for a new file."""
    path = Path(path)
    row = {**extra, **report.as_dict()}
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
        if new:
            writer.writeheader()
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
