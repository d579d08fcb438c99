"""Differentiable operations on :class:`~spdda.tensor.Tensor`.

Each op computes its forward value with numpy and registers a closure that
maps the output gradient to input gradients. Elementwise binary ops follow
numpy broadcasting; gradients are summed back to each operand's shape.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .tensor import DomainError, ShapeError, Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, opname: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: cannot combine shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def back(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return make_result(out, (a, b), back)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return make_result(-x.data, (x,), lambda g: (-g,))


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return make_result(x.data * c, (x,), lambda g: (g * c,))


def square(x) -> Tensor:
    x = as_tensor(x)
    return make_result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return make_result(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError(f"log of non-positive value (min {x.data.min()!r})")
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: (g * (1.0 - out * out),))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError(f"sqrt of negative value (min {x.data.min()!r})")
    out = np.sqrt(x.data)
    return make_result(out, (x,), lambda g: (g * 0.5 / out,))


def abs(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    return make_result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the gradient passes only where the value was inside."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return make_result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def floor_at(x, lo: float) -> Tensor:
    """max(x, lo) elementwise; values at or below ``lo`` receive no gradient."""
    x = as_tensor(x)
    keep = x.data > lo
    return make_result(np.where(keep, x.data, lo), (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product; operands of rank > 2 are treated as stacks of matrices."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return make_result(a.data @ b.data, (a, b), back)


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(out, (x,), back)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(sum(x, axis=axes, keepdims=keepdims), 1.0 / n)


def max(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Maximum over ``axis``; the gradient goes to the first maximal element."""
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    rest = tuple(a for a in range(x.ndim) if a not in axes)
    moved = np.transpose(x.data, rest + axes)
    flat = moved.reshape(moved.shape[: len(rest)] + (-1,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    if keepdims:
        out = np.expand_dims(out, axes)

    def back(g):
        g = g.reshape(arg.shape)
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, arg[..., None], g[..., None], axis=-1)
        gm = gf.reshape(moved.shape)
        return (np.transpose(gm, np.argsort(rest + axes)),)

    return make_result(out, (x,), back)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def index(x, idx) -> Tensor:
    """``x[idx]`` for any numpy index; repeated positions accumulate gradient."""
    x = as_tensor(x)
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in parts)

    def back(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] += g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return make_result(x.data[idx], (x,), back)


def take(x, indices, axis: int) -> Tensor:
    """Gather along one axis (indices may repeat, e.g. for edge padding)."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim

    def back(g):
        gx = np.zeros_like(x.data)
        gm = np.moveaxis(gx, axis, 0)
        np.add.at(gm, indices, np.moveaxis(g, axis, 0))
        return (gx,)

    return make_result(np.take(x.data, indices, axis=axis), (x,), back)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def pad(x, widths, mode: str = "constant") -> Tensor:
    """np.pad with gradient support for 'constant', 'edge', 'reflect' and 'symmetric'."""
    x = as_tensor(x)
    widths = [tuple(w) for w in widths]
    if mode == "constant":
        out = np.pad(x.data, widths)
        sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, x.shape))
        return make_result(out, (x,), lambda g: (g[sl],))
    out = x
    for axis, (lo, hi) in enumerate(widths):
        if lo or hi:
            idx = np.pad(np.arange(x.shape[axis]), (lo, hi), mode=mode)
            out = take(out, idx, axis)
    return out


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

def softmax(x, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Max-stabilised softmax.

    ``mask`` (boolean, broadcastable to x) restricts the normalisation to the
    True entries; masked entries come out as exact zeros. Every slice must
    keep at least one entry.
    """
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not np.all(mask.any(axis=axis)):
            raise ValueError("softmax mask removes every entry of some slice")
        z = np.where(mask, z, -np.inf)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), back)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), back)


def layer_norm(x, axis: int, gain=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalise each slice along ``axis`` to zero mean, unit (population) variance.

    ``gain`` and ``bias`` are 1-D with the length of ``axis``.
    """
    x = as_tensor(x)
    axis = axis % x.ndim
    if x.shape[axis] < 2:
        raise ShapeError(f"layer_norm needs at least 2 entries along axis {axis}, got {x.shape}")
    mu = mean(x, axis=axis, keepdims=True)
    xc = sub(x, mu)
    var = mean(square(xc), axis=axis, keepdims=True)
    y = div(xc, sqrt(add(var, eps)))
    bshape = [1] * x.ndim
    bshape[axis] = x.shape[axis]
    if gain is not None:
        y = mul(y, reshape(gain, tuple(bshape)))
    if bias is not None:
        y = add(y, reshape(bias, tuple(bshape)))
    return y


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def _windows(xl: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Receptive fields of a channels-last array as rows: (B*Ho*Wo, kh*kw*C).

    With channels innermost every copied run is a contiguous spectrum.
    """
    view = np.lib.stride_tricks.sliding_window_view(xl, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    B, Ho, Wo = view.shape[:3]
    return view.transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, -1), Ho, Wo


def conv2d(x, w, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    x: (B, C, H, W), w: (O, C, kh, kw), bias: (O,) or None. Receptive fields
    are gathered once from a channels-last copy and contracted against the
    kernel in one matrix product.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise ShapeError(f"conv2d: input has {C} channels but weight expects {Cw} ({x.shape} vs {w.shape})")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    xl = np.zeros((B, Hp, Wp, C))
    xl[:, padding:padding + H, padding:padding + W] = x.data.transpose(0, 2, 3, 1)
    colmat, Ho, Wo = _windows(xl, kh, kw, stride)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(O, kh * kw * C)
    out = (colmat @ wmat.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    inputs = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        inputs.append(bias)

    def back(g):
        gx = gw = None
        gl = g.transpose(0, 2, 3, 1)
        g2 = gl.reshape(B * Ho * Wo, O)
        if w.requires_grad:
            gw = (g2.T @ colmat).reshape(O, kh, kw, C).transpose(0, 3, 1, 2)
        if x.requires_grad:
            if stride == 1:
                # full correlation of the output gradient with the flipped kernel
                gp = np.zeros((B, Ho + 2 * (kh - 1), Wo + 2 * (kw - 1), O))
                gp[:, kh - 1:kh - 1 + Ho, kw - 1:kw - 1 + Wo] = gl
                gmat, _, _ = _windows(gp, kh, kw, 1)
                wflip = w.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(kh * kw * O, C)
                gxp = (gmat @ wflip).reshape(B, Hp, Wp, C)
            else:
                gcols = (g2 @ wmat).reshape(B, Ho, Wo, kh, kw, C)
                gxp = np.zeros((B, Hp, Wp, C))
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += gcols[:, :, :, i, j]
            gx = gxp.transpose(0, 3, 1, 2)[:, :, padding:padding + H, padding:padding + W]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_result(out, inputs, back)


def depthwise_conv2d(x, w, bias=None, padding: int = 0) -> Tensor:
    """Per-channel 2-D cross-correlation; w: (C, kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    B, C, H, W = x.shape
    if w.ndim != 3 or w.shape[0] != C:
        raise ShapeError(f"depthwise_conv2d: weight {w.shape} does not match input {x.shape}")
    _, kh, kw = w.shape
    Ho, Wo = H + 2 * padding - kh + 1, W + 2 * padding - kw + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"depthwise_conv2d: kernel {kh}x{kw} larger than padded input")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    out = np.zeros((B, C, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + Ho, j:j + Wo] * w.data[None, :, i, j, None, None]
    inputs = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[None, :, None, None]
        inputs.append(bias)

    def back(g):
        gx = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + Ho, j:j + Wo] += g * w.data[None, :, i, j, None, None]
                gw[:, i, j] = (g * xp[:, :, i:i + Ho, j:j + Wo]).sum(axis=(0, 2, 3))
        if padding:
            gx = gx[:, :, padding:padding + H, padding:padding + W]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_result(out, inputs, back)


def pool(x, kind: str, region) -> Tensor:
    """Non-overlapping average or max pooling over the trailing axes.

    ``region`` gives the window size for each of the last ``len(region)``
    axes; ``None`` means one window covering all of them. When a window size
    does not divide the extent, the last window is truncated. Average pooling
    divides by the true window population; max pooling sends the gradient to
    the first (lowest index) maximal element.
    """
    x = as_tensor(x)
    if kind not in ("avg", "max"):
        raise ValueError(f"pool kind must be 'avg' or 'max', got {kind!r}")
    if region is None:
        region = x.shape[-2:] if x.ndim >= 2 else x.shape
    region = tuple(int(r) for r in region)
    nlead = x.ndim - len(region)
    lead = x.shape[:nlead]
    extents = x.shape[nlead:]
    nout = tuple(-(-n // r) for n, r in zip(extents, region))
    padded_ext = tuple(o * r for o, r in zip(nout, region))
    fill = 0.0 if kind == "avg" else -np.inf
    widths = [(0, 0)] * nlead + [(0, p - n) for p, n in zip(padded_ext, extents)]
    xp = np.pad(x.data, widths, constant_values=fill)
    # (lead..., o1, r1, o2, r2, ...) -> (lead..., o1, o2, ..., r1, r2, ...)
    split = lead + tuple(v for o, r in zip(nout, region) for v in (o, r))
    k = len(region)
    perm = tuple(range(nlead)) + tuple(nlead + 2 * i for i in range(k)) + tuple(nlead + 2 * i + 1 for i in range(k))
    win = xp.reshape(split).transpose(perm).reshape(lead + nout + (-1,))
    inv = np.argsort(perm)

    def unwindow(gw):
        gw = gw.reshape(lead + nout + region).transpose(inv).reshape(xp.shape)
        return gw[tuple(slice(0, n) for n in x.shape)]

    if kind == "avg":
        ones = np.pad(np.ones(extents), [(0, p - n) for p, n in zip(padded_ext, extents)])
        counts = ones.reshape(tuple(v for o, r in zip(nout, region) for v in (o, r)))
        counts = counts.transpose(tuple(2 * i for i in range(k)) + tuple(2 * i + 1 for i in range(k)))
        counts = counts.reshape(nout + (-1,)).sum(axis=-1)
        out = win.sum(axis=-1) / counts

        def back(g):
            gw = np.broadcast_to((g / counts)[..., None], win.shape)
            return (unwindow(gw),)

        return make_result(out, (x,), back)

    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        return (unwindow(gw),)

    return make_result(out, (x,), back)


# ---------------------------------------------------------------------------
# composite helpers
# ---------------------------------------------------------------------------

def l2_normalize(x, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = sqrt(add(sum(square(x), axis=axis, keepdims=True), eps))
    return div(x, norm)


def channel_matmul(x, mat: np.ndarray) -> Tensor:
    """Apply a constant (Cout x Cin) matrix along axis 1 of a (B, Cin, ...) tensor."""
    x = as_tensor(x)
    mat = np.asarray(mat, dtype=np.float64)
    if mat.shape[1] != x.shape[1]:
        raise ShapeError(f"channel_matmul: matrix {mat.shape} vs input {x.shape}")

    def back(g):
        return (np.moveaxis(np.tensordot(mat.T, g, axes=([1], [1])), 0, 1),)

    out = np.moveaxis(np.tensordot(mat, x.data, axes=([1], [1])), 0, 1)
    return make_result(out, (x,), back)


SQRT_2PI = math.sqrt(2.0 * math.pi)
