"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad, tape_scope


def numerical_gradient(fn: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-5) -> list:
    """d fn / d input by central differences; ``fn`` must return a scalar Tensor."""
    with no_grad():
        return [_central_difference(fn, inputs, t, step) for t in inputs]


def _central_difference(fn, inputs, t: Tensor, step: float) -> np.ndarray:
    g = np.zeros_like(t.data)
    flat, gflat = t.data.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(*inputs).item()
        flat[i] = orig - step
        lo = fn(*inputs).item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return g


def analytic_gradient(fn: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list:
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with tape_scope():
        out = fn(*inputs)
        backward(out)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max|a - b| / max(max|a|, max|b|); 0 when both vanish."""
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - b), initial=0.0) / scale)


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-5) -> float:
    """Largest relative error between analytic and numerical gradients over all inputs."""
    ana = analytic_gradient(fn, inputs)
    for t in inputs:
        t.requires_grad = False
    num = numerical_gradient(fn, inputs, step)
    for t in inputs:
        t.requires_grad = True
    return max(relative_error(a, n) for a, n in zip(ana, num))


def directional_check(fn: Callable[[], Tensor], params: Sequence[Tensor], rng: np.random.Generator,
                      step: float = 1e-5) -> float:
    """Compare <grad, v> against a central difference along a random direction v.

    Cheap alternative to :func:`gradcheck` when ``params`` holds thousands of
    entries: one backward pass and two extra forward passes.
    """
    for p in params:
        p.requires_grad = True
        p.grad = None
    with tape_scope():
        backward(fn())
    dirs = [rng.uniform(-1.0, 1.0, size=p.shape) for p in params]
    ana = sum(float(np.sum((np.zeros_like(p.data) if p.grad is None else p.grad) * d)) for p, d in zip(params, dirs))
    with no_grad():
        for p, d in zip(params, dirs):
            p.data += step * d
        hi = fn().item()
        for p, d in zip(params, dirs):
            p.data -= 2 * step * d
        lo = fn().item()
        for p, d in zip(params, dirs):
            p.data += step * d
    num = (hi - lo) / (2 * step)
    scale = max(abs(ana), abs(num))
    return 0.0 if scale == 0.0 else abs(ana - num) / scale
