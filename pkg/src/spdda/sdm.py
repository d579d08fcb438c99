"""Spectral diversity module.

The generator encodes a source batch with ResBlocks, scores every channel
through channel attention, keeps a random number K of the best-scoring
channels (in spectral order) and mixes neighbouring channels with
per-channel Gaussian kernels whose width comes from how similar each channel
is to the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .nn import ChannelAttention, Encoder, Module
from .tensor import ShapeError, Tensor, as_tensor, no_grad

THRESHOLD_DIRECTIONS = ("le", "ge")
CASM_MODES = ("adaptive", "fixed", "off")


@dataclass
class ChannelMask:
    keep: np.ndarray
    channels: int

    @property
    def k(self) -> int:
        return int(self.keep.size)

    def to_dict(self) -> dict:
        return {"keep": self.keep.tolist(), "k": self.k, "channels": self.channels}


@dataclass
class SpectralMixer:
    """Per-output-channel mixing kernels over tap offsets -p..p.

    ``kernels`` is the differentiable (K, 2p+1) tensor used by
    :func:`apply_mixer`; ``survivors`` marks taps that passed the threshold.
    """

    kernels: Tensor
    sigma: np.ndarray
    survivors: np.ndarray
    m: float
    eps: float
    p: int
    mode: str = "adaptive"
    threshold_direction: str = "le"

    @property
    def weights(self) -> np.ndarray:
        return self.kernels.data

    @property
    def k(self) -> int:
        return self.kernels.shape[0]

    @property
    def taps(self) -> int:
        return 2 * self.p + 1

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "threshold_direction": self.threshold_direction,
            "m": self.m,
            "eps": self.eps,
            "p": self.p,
            "sigma": self.sigma.tolist(),
            "weights": self.weights.tolist(),
            "survivors": self.survivors.astype(int).tolist(),
        }


# ---------------------------------------------------------------------------
# channel scoring and masking
# ---------------------------------------------------------------------------

def semantic_score(F_S: Tensor) -> np.ndarray:
    """Per-channel average + max over the spatial map, averaged over the batch."""
    with no_grad():
        s = ops.add(ops.pool(F_S, "avg", None), ops.pool(F_S, "max", None))
    return s.data.reshape(F_S.shape[0], F_S.shape[1]).mean(axis=0)


def top_k_channels(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores (ties to the lower index), in spectral order."""
    idx = np.arange(scores.size)
    order = np.lexsort((idx, -np.asarray(scores, dtype=np.float64)))
    return np.sort(order[:k])


def k_range(channels: int, k_min_fraction: float) -> tuple[int, int]:
    if not 0 < k_min_fraction <= 1:
        raise ValueError(f"k_min_fraction must be in (0, 1], got {k_min_fraction}")
    lo = max(math.ceil(k_min_fraction * channels - 1e-9), min(2, channels))
    return lo, channels


def sample_mask(scores: np.ndarray, rng: np.random.Generator, k_min_fraction: float = 0.5,
                k: Optional[int] = None) -> ChannelMask:
    """Draw K uniformly from its allowed range and keep the top-K channels."""
    C = scores.size
    lo, hi = k_range(C, k_min_fraction)
    if k is None:
        k = int(rng.integers(lo, hi + 1))
    if not 1 <= k <= C:
        raise ValueError(f"K must be in [1, {C}], got {k}")
    return ChannelMask(top_k_channels(scores, k), C)


# ---------------------------------------------------------------------------
# inter-channel similarity and the adaptive mixer
# ---------------------------------------------------------------------------

def cosine_from_gram(gram) -> Tensor:
    """Cosine matrix from a Gram matrix; zero-norm channels get 0 off the diagonal."""
    gram = as_tensor(gram)
    K = gram.shape[0]
    eye = np.eye(K)
    sq = ops.floor_at(ops.sum(ops.mul(gram, eye), axis=1), 1e-300)
    norms = ops.sqrt(sq)
    denom = ops.mul(ops.reshape(norms, (K, 1)), ops.reshape(norms, (1, K)))
    cos = ops.div(gram, denom)
    return ops.add(ops.mul(cos, 1.0 - eye), eye)


def channel_similarity(F_masked: Tensor) -> Tensor:
    """K x K cosine similarity between batch-concatenated channel maps."""
    B, K = F_masked.shape[:2]
    flat = ops.reshape(ops.transpose(F_masked, (1, 0, 2, 3)), (K, -1))
    return cosine_from_gram(ops.matmul(flat, ops.transpose(flat, (1, 0))))


def row_sigma(similarity: Tensor, sigma_min: float = 1e-3) -> Tensor:
    """Population standard deviation of each row, floored at ``sigma_min``."""
    K = similarity.shape[0]
    if K < 2:
        raise ValueError(f"row_sigma needs at least 2 channels, got {K}")
    centred = ops.sub(similarity, ops.mean(similarity, axis=1, keepdims=True))
    var = ops.mean(ops.square(centred), axis=1)
    return ops.sqrt(ops.floor_at(var, sigma_min * sigma_min))


def tap_positions(m: float, eps: float, p: int) -> np.ndarray:
    """Gaussian argument for each tap offset j = -p..p."""
    j = np.arange(-p, p + 1)
    return m + eps * (j + p)


def gaussian_weights(sigma, m: float, eps: float, p: int) -> Tensor:
    """Raw (K, 2p+1) Gaussian weights exp(-l^2 / 2 sigma^2) / (sqrt(2 pi) sigma)."""
    sigma = ops.reshape(sigma, (-1, 1))
    l2 = tap_positions(m, eps, p)[None, :] ** 2
    expo = ops.exp(ops.div(-0.5 * l2, ops.square(sigma)))
    return ops.div(expo, ops.scale(sigma, ops.SQRT_2PI))


def threshold_mask(raw: np.ndarray, sigma: np.ndarray, direction: str = "le") -> np.ndarray:
    """Taps kept by the threshold; rows with no survivor keep only the centre tap."""
    if direction not in THRESHOLD_DIRECTIONS:
        raise ValueError(f"threshold_direction must be one of {THRESHOLD_DIRECTIONS}, got {direction!r}")
    s = sigma.reshape(-1, 1)
    keep = raw <= s if direction == "le" else raw >= s
    empty = ~keep.any(axis=1)
    if empty.any():
        centre = raw.shape[1] // 2
        keep[empty] = False
        keep[empty, centre] = True
    return keep


def build_mixer(sigma, m: float = -5.0, eps: float = 0.5, p: int = 10,
                threshold_direction: str = "le") -> SpectralMixer:
    """Channel-wise adaptive kernels: Gaussian weights, threshold, softmax over survivors."""
    sigma = as_tensor(sigma)
    if np.any(sigma.data <= 0):
        raise ValueError("mixer scale must be positive")
    raw = gaussian_weights(sigma, m, eps, p)
    keep = threshold_mask(raw.data, sigma.data, threshold_direction)
    kernels = ops.softmax(raw, axis=1, mask=keep)
    return SpectralMixer(kernels, sigma.data.copy(), keep, m, eps, p, "adaptive", threshold_direction)


def fixed_mixer(sigma, K: int, m: float = -5.0, eps: float = 0.5, p: int = 10) -> SpectralMixer:
    """One shared Gaussian kernel (scale = mean sigma), softmax over all taps."""
    sigma = as_tensor(sigma)
    shared = ops.mean(sigma, keepdims=True)
    raw = gaussian_weights(shared, m, eps, p)
    kernel = ops.softmax(raw, axis=1)
    kernels = ops.mul(kernel, np.ones((K, 1)))
    return SpectralMixer(kernels, np.full(K, shared.item()), np.ones((K, 2 * p + 1), dtype=bool),
                         m, eps, p, "fixed", "none")


def identity_mixer(K: int, p: int = 10, m: float = -5.0, eps: float = 0.5) -> SpectralMixer:
    w = np.zeros((K, 2 * p + 1))
    w[:, p] = 1.0
    return SpectralMixer(Tensor(w), np.zeros(K), w > 0, m, eps, p, "off", "none")


def apply_mixer(x_mask: Tensor, mixer: SpectralMixer) -> Tensor:
    """Channel-specific 1-D convolution along the spectral axis.

    Output channel i is sum_j x[i + j] * w_i[j] for j = -p..p, with the
    spectrum extended by repeating its first and last channels.
    """
    B, K = x_mask.shape[:2]
    if mixer.k != K:
        raise ShapeError(f"mixer has {mixer.k} kernels but input has {K} channels")
    p = mixer.p
    padded = ops.take(x_mask, np.pad(np.arange(K), p, mode="edge"), axis=1)
    out = None
    for t in range(2 * p + 1):
        if not np.any(mixer.weights[:, t]) and not mixer.kernels.requires_grad:
            continue
        w = ops.reshape(ops.index(mixer.kernels, (slice(None), t)), (1, K, 1, 1))
        term = ops.mul(ops.index(padded, (slice(None), slice(t, t + K))), w)
        out = term if out is None else ops.add(out, term)
    return out


# ---------------------------------------------------------------------------
# the generator
# ---------------------------------------------------------------------------

@dataclass
class SDMOutput:
    x_ed: Tensor
    mask: ChannelMask
    mixer: SpectralMixer
    features: Tensor
    semantic: Tensor
    scores: np.ndarray
    similarity: Optional[Tensor] = None
    sigma: Optional[Tensor] = None
    attention: Optional[Tensor] = field(default=None, repr=False)


class SpectralDiversityModule(Module):
    """ResBlock encoder + channel attention + mask + adaptive spectral mixer."""

    def __init__(self, channels: int, rng: np.random.Generator, depth: int = 2,
                 zero_residual: bool = True, m: float = -5.0, eps: float = 0.5, p: int = 10,
                 k_min_fraction: float = 0.5, sigma_min: float = 1e-3,
                 threshold_direction: str = "le", casm_mode: str = "adaptive"):
        if casm_mode not in CASM_MODES:
            raise ValueError(f"casm_mode must be one of {CASM_MODES}, got {casm_mode!r}")
        self.channels = channels
        self.encoder = Encoder(channels, rng, depth, zero_residual)
        self.attention = ChannelAttention(channels, rng)
        self.m, self.eps, self.p = m, eps, p
        self.k_min_fraction = k_min_fraction
        self.sigma_min = sigma_min
        self.threshold_direction = threshold_direction
        self.casm_mode = casm_mode

    def encode(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        F = self.encoder(x)
        # F_S only drives the (discrete) channel ranking, so nothing downstream
        # can send a gradient back through it
        with no_grad():
            F_S, attn = self.attention.forward_with_attention(F)
        return F, F_S, attn

    def make_mixer(self, F_masked: Tensor) -> tuple[SpectralMixer, Optional[Tensor], Optional[Tensor]]:
        if self.casm_mode == "off":
            return identity_mixer(F_masked.shape[1], self.p, self.m, self.eps), None, None
        return self.mixer_from_similarity(channel_similarity(F_masked))

    def mixer_from_similarity(self, sim: Tensor) -> tuple[SpectralMixer, Optional[Tensor], Optional[Tensor]]:
        K = sim.shape[0]
        if self.casm_mode == "off":
            return identity_mixer(K, self.p, self.m, self.eps), None, None
        sigma = row_sigma(sim, self.sigma_min)
        if self.casm_mode == "fixed":
            return fixed_mixer(sigma, K, self.m, self.eps, self.p), sim, sigma
        return build_mixer(sigma, self.m, self.eps, self.p, self.threshold_direction), sim, sigma

    def forward(self, x: Tensor, rng: np.random.Generator, k: Optional[int] = None,
                mask: Optional[ChannelMask] = None) -> SDMOutput:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"generator built for {self.channels} channels got input {x.shape}")
        F, F_S, attn = self.encode(x)
        scores = semantic_score(F_S)
        if mask is None:
            mask = sample_mask(scores, rng, self.k_min_fraction, k)
        F_masked = ops.take(F, mask.keep, axis=1)
        mixer, sim, sigma = self.make_mixer(F_masked)
        x_ed = ops.clip(apply_mixer(F_masked, mixer), 0.0, 1.0)
        return SDMOutput(x_ed, mask, mixer, F, F_S, scores, sim, sigma, attn)
