"""Spatial-spectral co-optimisation losses.

L_SS = L_SF + lambda * L_SC, where L_SF compares grayscale renderings of the
source and augmented batches (MSE + SSIM loss + Sobel gradient loss) and L_SC
compares the even and odd channels of the augmented batch (MSE + SSIM loss).
lambda = 1 + tanh(t) is recomputed every step from the current loss values
and carries no gradient.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from . import ops
from .tensor import Tensor, as_tensor

SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SF_FLOOR = 1e-8

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


def grayscale(x) -> Tensor:
    """Per-pixel mean across channels: (B, C, H, W) -> (B, 1, H, W)."""
    return ops.mean(as_tensor(x), axis=1, keepdims=True)


def mse(a, b) -> Tensor:
    return ops.mean(ops.square(ops.sub(a, b)))


@lru_cache(maxsize=8)
def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _as_images(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B*C, 1, H, W) so every channel is scored as its own image."""
    B, C, H, W = x.shape
    return ops.reshape(x, (B * C, 1, H, W))


def ssim(a, b, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> Tensor:
    """Mean local SSIM over valid Gaussian windows, data range 1.

    Inputs are (B, C, H, W); each channel of each sample is an image. Images
    smaller than the window are scored with one global window.
    """
    a, b = _as_images(as_tensor(a)), _as_images(as_tensor(b))
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    H, W = a.shape[2:]
    if H < window or W < window:
        def filt(t):
            return ops.mean(t, axis=(2, 3), keepdims=True)
    else:
        kernel = gaussian_window(window, sigma)[None, None]

        def filt(t):
            return ops.conv2d(t, kernel)

    mu_a, mu_b = filt(a), filt(b)
    mu_aa, mu_bb, mu_ab = ops.square(mu_a), ops.square(mu_b), ops.mul(mu_a, mu_b)
    var_a = ops.sub(filt(ops.square(a)), mu_aa)
    var_b = ops.sub(filt(ops.square(b)), mu_bb)
    cov = ops.sub(filt(ops.mul(a, b)), mu_ab)
    num = ops.mul(ops.add(ops.scale(mu_ab, 2.0), SSIM_C1), ops.add(ops.scale(cov, 2.0), SSIM_C2))
    den = ops.mul(ops.add(ops.add(mu_aa, mu_bb), SSIM_C1), ops.add(ops.add(var_a, var_b), SSIM_C2))
    return ops.mean(ops.div(num, den))


def ssim_loss(a, b) -> Tensor:
    return ops.sub(1.0, ssim(a, b))


def sobel_magnitude(img: Tensor) -> Tensor:
    """Sobel gradient magnitude of (N, 1, H, W) images with replicate padding."""
    padded = ops.pad(img, [(0, 0), (0, 0), (1, 1), (1, 1)], mode="edge")
    gx = ops.conv2d(padded, SOBEL_X[None, None])
    gy = ops.conv2d(padded, SOBEL_Y[None, None])
    # the 1e-12 keeps d/dx sqrt finite on flat regions
    return ops.sqrt(ops.add(ops.add(ops.square(gx), ops.square(gy)), 1e-12))


def gradient_loss(a, b) -> Tensor:
    """Mean absolute difference between Sobel magnitudes."""
    a, b = _as_images(as_tensor(a)), _as_images(as_tensor(b))
    return ops.mean(ops.abs(ops.sub(sobel_magnitude(a), sobel_magnitude(b))))


def spatial_fidelity(i_sd, i_ed) -> tuple[Tensor, dict]:
    """L_SF and its three terms for two grayscale batches."""
    terms = {
        "mse_sf": mse(i_sd, i_ed),
        "ssim_sf": ssim_loss(i_sd, i_ed),
        "grad_sf": gradient_loss(i_sd, i_ed),
    }
    total = ops.add(ops.add(terms["mse_sf"], terms["ssim_sf"]), terms["grad_sf"])
    return total, terms


def split_even_odd(x_ed: Tensor) -> tuple[Tensor, Tensor]:
    """Even-index and odd-index channel stacks, truncated to K // 2 channels each."""
    K = x_ed.shape[1]
    if K < 2:
        raise ValueError(f"spectral continuity needs at least 2 channels, got {K}")
    n = K // 2
    even = ops.take(x_ed, np.arange(0, 2 * n, 2), axis=1)
    odd = ops.take(x_ed, np.arange(1, 2 * n, 2), axis=1)
    return even, odd


def spectral_continuity(x_ed) -> tuple[Tensor, dict]:
    even, odd = split_even_odd(as_tensor(x_ed))
    terms = {"mse_sc": mse(even, odd), "ssim_sc": ssim_loss(even, odd)}
    return ops.add(terms["mse_sc"], terms["ssim_sc"]), terms


def lambda_argument(l_sf_norm: float, l_sc_norm: float, s: float = 15.0) -> float:
    """t = (|L_SC| - s|L_SF|/2) * s|L_SF|, with |L_SF| floored at 1e-8."""
    if s <= 0:
        raise ValueError(f"s must be positive, got {s}")
    sf = max(abs(float(l_sf_norm)), SF_FLOOR)
    translate = s * sf / 2.0
    curvature = 1.0 / (s * sf)
    return (abs(float(l_sc_norm)) - translate) / curvature


def lambda_from_argument(t: float) -> float:
    """1 + tanh(t), written as 2 * sigmoid(2t) so it stays above 0 for very negative t."""
    if t >= 0:
        return 2.0 / (1.0 + math.exp(-2.0 * t))
    e = math.exp(2.0 * t)
    return 2.0 * e / (1.0 + e)


def lambda_schedule(l_sf_norm: float, l_sc_norm: float, s: float = 15.0) -> float:
    return lambda_from_argument(lambda_argument(l_sf_norm, l_sc_norm, s))


@dataclass
class LossReport:
    l_sf: float
    l_sc: float
    lam: float
    l_ss: float
    t: float
    components: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def sscom_loss(x_sd, x_ed, s: float = 15.0, use_sf: bool = True, use_sc: bool = True,
               lambda_fn: Optional[Callable[[float, float], float]] = None) -> tuple[Tensor, LossReport]:
    """Combined spatial-spectral objective.

    ``lambda_fn(l_sf, l_sc)`` overrides the adaptive weight (used by the
    ablation variants). A disabled term contributes 0 to both the loss and
    the report.
    """
    x_sd, x_ed = as_tensor(x_sd), as_tensor(x_ed)
    components: dict = {}
    l_sf = l_sc = Tensor(0.0)
    if use_sf:
        l_sf, terms = spatial_fidelity(grayscale(x_sd), grayscale(x_ed))
        components.update({k: v.item() for k, v in terms.items()})
    if use_sc:
        l_sc, terms = spectral_continuity(x_ed)
        components.update({k: v.item() for k, v in terms.items()})
    sf, sc = l_sf.item(), l_sc.item()
    t = lambda_argument(sf, sc, s)
    lam = lambda_from_argument(t) if lambda_fn is None else float(lambda_fn(sf, sc))
    l_ss = ops.add(l_sf, ops.scale(l_sc, lam))
    return l_ss, LossReport(sf, sc, lam, l_ss.item(), t, components)
