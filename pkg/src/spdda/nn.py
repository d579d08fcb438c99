"""Learned building blocks: convolutions, ResBlock, channel attention, feed-forward."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor


class Module:
    """Parameter container; parameters are Tensors with ``requires_grad=True``."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def load_arrays(self, arrays: dict, prefix: str = "") -> None:
        for name, p in self.named_parameters():
            src = arrays[prefix + name]
            if src.shape != p.shape:
                raise ShapeError(f"parameter {prefix + name}: stored shape {src.shape} != {p.shape}")
            p.data[...] = src

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Conv2d(Module):
    """Shape-preserving (stride 1, padding k//2) 2-D convolution."""

    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, bias: bool = True):
        if k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {k}")
        fan_in = cin * k * k
        self.weight = _uniform(rng, (cout, cin, k, k), fan_in)
        self.bias = _uniform(rng, (cout,), fan_in) if bias else None
        self.padding = k // 2

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, padding=self.padding)

    def zero_(self) -> None:
        self.weight.data[...] = 0.0
        if self.bias is not None:
            self.bias.data[...] = 0.0


class DepthwiseConv2d(Module):
    def __init__(self, channels: int, k: int, rng: np.random.Generator):
        self.weight = _uniform(rng, (channels, k, k), k * k)
        self.bias = _uniform(rng, (channels,), k * k)
        self.padding = k // 2

    def forward(self, x: Tensor) -> Tensor:
        return ops.depthwise_conv2d(x, self.weight, self.bias, padding=self.padding)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator):
        self.weight = _uniform(rng, (din, dout), din)
        self.bias = _uniform(rng, (dout,), din)

    def forward(self, x: Tensor) -> Tensor:
        return ops.add(ops.matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    """Layer norm across the channel axis (axis 1) of a (B, C, H, W) tensor."""

    def __init__(self, channels: int):
        self.gain = Tensor(np.ones(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, 1, self.gain, self.bias)


class ResBlock(Module):
    """y = x + conv2(relu(conv1(x))) with 3x3 shape-preserving convolutions.

    ``zero_residual=True`` zeroes conv2 so the block starts as the identity.
    """

    def __init__(self, channels: int, rng: np.random.Generator, zero_residual: bool = False):
        self.channels = channels
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.conv2 = Conv2d(channels, channels, 3, rng)
        if zero_residual:
            self.conv2.zero_()

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"ResBlock built for {self.channels} channels got input {x.shape}")
        return ops.add(x, self.conv2(ops.relu(self.conv1(x))))


class FeedForward(Module):
    def __init__(self, channels: int, rng: np.random.Generator, expansion: int = 2):
        self.fc1 = Conv2d(channels, expansion * channels, 1, rng)
        self.fc2 = Conv2d(expansion * channels, channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.relu(self.fc1(x)))


class ConvGroup(Module):
    """Pointwise projection followed by a 3x3 depthwise convolution."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.point = Conv2d(channels, channels, 1, rng)
        self.depth = DepthwiseConv2d(channels, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.depth(self.point(x))

    def identity_(self) -> None:
        c = self.point.weight.shape[0]
        self.point.weight.data[...] = np.eye(c)[:, :, None, None]
        self.point.bias.data[...] = 0.0
        self.depth.weight.data[...] = 0.0
        self.depth.weight.data[:, 1, 1] = 1.0
        self.depth.bias.data[...] = 0.0


class ChannelAttention(Module):
    """Single-head self-attention across channels.

    Each channel's H*W map is one token, so the attention matrix is C x C.
    The block is pre-norm with residuals around both the attention and the
    feed-forward network.
    """

    def __init__(self, channels: int, rng: np.random.Generator, expansion: int = 2):
        self.channels = channels
        self.norm1 = LayerNorm(channels)
        self.to_q = ConvGroup(channels, rng)
        self.to_k = ConvGroup(channels, rng)
        self.to_v = ConvGroup(channels, rng)
        self.proj = Conv2d(channels, channels, 1, rng)
        self.norm2 = LayerNorm(channels)
        self.ffn = FeedForward(channels, rng, expansion)

    def attention(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return (A, A @ V) for an already normalised input."""
        B, C, H, W = x.shape
        n = H * W
        q = ops.reshape(self.to_q(x), (B, C, n))
        k = ops.reshape(self.to_k(x), (B, C, n))
        v = ops.reshape(self.to_v(x), (B, C, n))
        logits = ops.scale(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(n))
        attn = ops.softmax(logits, axis=-1)
        return attn, ops.reshape(ops.matmul(attn, v), (B, C, H, W))

    def forward_with_attention(self, F: Tensor) -> tuple[Tensor, Tensor]:
        if F.ndim != 4 or F.shape[1] != self.channels:
            raise ShapeError(f"ChannelAttention built for {self.channels} channels got input {F.shape}")
        attn, mixed = self.attention(self.norm1(F))
        h = ops.add(F, self.proj(mixed))
        return ops.add(h, self.ffn(self.norm2(h))), attn

    def forward(self, F: Tensor) -> Tensor:
        return self.forward_with_attention(F)[0]


class Encoder(Module):
    """Stack of ResBlocks keeping the channel count."""

    def __init__(self, channels: int, rng: np.random.Generator, depth: int = 2, zero_residual: bool = False):
        self.blocks = [ResBlock(channels, rng, zero_residual) for _ in range(depth)]

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


def count_parameters(module: Module, only: Optional[str] = None) -> int:
    return int(sum(p.size for n, p in module.named_parameters() if only is None or n.startswith(only)))
