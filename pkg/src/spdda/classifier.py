"""LeNet-style patch classifier that accepts any number of spectral channels.

The input spectrum is first linearly resampled to a fixed reference count,
so a single set of weights serves cubes with K != C channels.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import ops
from .nn import Conv2d, Linear, Module
from .tensor import ShapeError, Tensor, as_tensor, no_grad


@lru_cache(maxsize=256)
def resample_matrix(k: int, c_ref: int) -> np.ndarray:
    """(c_ref, k) linear-interpolation matrix between two uniform spectral grids."""
    if k < 2:
        raise ValueError(f"spectral resampling needs at least 2 input channels, got {k}")
    mat = np.zeros((c_ref, k))
    if c_ref == 1:
        mat[0, :] = 1.0 / k
        return mat
    for c in range(c_ref):
        pos = c * (k - 1) / (c_ref - 1)
        i0 = min(int(np.floor(pos)), k - 2)
        frac = pos - i0
        mat[c, i0] += 1.0 - frac
        mat[c, i0 + 1] += frac
    mat.flags.writeable = False
    return mat


def spectral_resample(x, c_ref: int) -> Tensor:
    """(B, K, H, W) -> (B, c_ref, H, W) by per-pixel linear interpolation."""
    x = as_tensor(x)
    if x.shape[1] == c_ref:
        return x
    return ops.channel_matmul(x, resample_matrix(x.shape[1], c_ref))


def resample_array(values: np.ndarray, c_ref: int, axis: int = 0) -> np.ndarray:
    """numpy counterpart of :func:`spectral_resample` along an arbitrary axis."""
    k = values.shape[axis]
    if k == c_ref:
        return values
    mat = resample_matrix(k, c_ref)
    return np.moveaxis(np.tensordot(mat, np.moveaxis(values, axis, 0), axes=([1], [0])), 0, axis)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels in [0, num_classes)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    n, classes = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: {n} logits rows but labels shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}]")
    picked = ops.index(ops.log_softmax(logits, axis=1), (np.arange(n), labels))
    return ops.neg(ops.mean(picked))


class AdaptiveLeNet(Module):
    def __init__(self, c_ref: int, num_classes: int, rng: np.random.Generator,
                 patch_size: int = 13, hidden: int = 128, filters=(16, 32)):
        if patch_size < 9:
            raise ValueError(f"patch_size must be at least 9, got {patch_size}")
        self.c_ref = c_ref
        self.num_classes = num_classes
        self.patch_size = patch_size
        f1, f2 = filters
        self.conv1 = Conv2d(c_ref, f1, 5, rng)
        self.conv2 = Conv2d(f1, f2, 5, rng)
        side = -(-patch_size // 2)
        side = -(-side // 2)  # two ceil-mode 2x2 pools
        self.fc1 = Linear(f2 * side * side, hidden, rng)
        self.fc2 = Linear(hidden, num_classes, rng)

    def forward(self, x) -> tuple[Tensor, Tensor]:
        """Return (logits, unit-norm embedding) for a (B, K, H, W) batch."""
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[2:] != (self.patch_size, self.patch_size):
            raise ShapeError(f"classifier expects (B, K, {self.patch_size}, {self.patch_size}) input, got {x.shape}")
        h = spectral_resample(x, self.c_ref)
        h = ops.pool(ops.relu(self.conv1(h)), "avg", (2, 2))
        h = ops.pool(ops.relu(self.conv2(h)), "avg", (2, 2))
        h = ops.reshape(h, (x.shape[0], -1))
        z = self.fc1(h)
        logits = self.fc2(ops.relu(z))
        return logits, ops.l2_normalize(z, axis=1)

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        preds = []
        with no_grad():
            for i in range(0, len(x), batch_size):
                logits, _ = self.forward(Tensor(x[i:i + batch_size]))
                preds.append(logits.data.argmax(axis=1))
        return np.concatenate(preds) if preds else np.zeros(0, dtype=int)


def classify(model: AdaptiveLeNet, x) -> tuple[Tensor, Tensor]:
    return model(x)
