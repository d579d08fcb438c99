"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation that touches a tensor with ``requires_grad=True`` is appended
to the tape of the current thread. Because operations are recorded in the
order they execute, the tape is already topologically sorted and
:func:`backward` simply replays it in reverse.

Parameters live outside the tape. A training step typically looks like::

    with tape_scope():
        loss = model(x)
        backward(loss)
    optimizer.step()
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class DomainError(ValueError):
    """Raised when an operation is evaluated outside its domain (e.g. log of 0)."""


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Record:
    inputs: tuple
    output: "Tensor"
    backward: BackwardFn


class Tape:
    """Ordered list of recorded operations."""

    def __init__(self):
        self.records: list[Record] = []

    def __len__(self):
        return len(self.records)

    def record(self, output: "Tensor", inputs: tuple, backward: BackwardFn) -> None:
        output.node_id = len(self.records)
        output._tape = self
        self.records.append(Record(inputs, output, backward))

    def reset(self) -> None:
        for rec in self.records:
            rec.output._tape = None
            rec.output.node_id = None
        self.records.clear()


_local = threading.local()


def _state():
    if not hasattr(_local, "tape"):
        _local.tape = Tape()
        _local.enabled = True
    return _local


def current_tape() -> Optional[Tape]:
    """Tape of the calling thread, or None while gradients are disabled."""
    st = _state()
    return st.tape if st.enabled else None


@contextmanager
def tape_scope() -> Iterator[Tape]:
    """Run a block on a fresh tape; the previous tape is restored afterwards."""
    st = _state()
    saved, saved_enabled = st.tape, st.enabled
    st.tape, st.enabled = Tape(), True
    try:
        yield st.tape
    finally:
        st.tape.reset()
        st.tape, st.enabled = saved, saved_enabled


@contextmanager
def no_grad() -> Iterator[None]:
    st = _state()
    saved = st.enabled
    st.enabled = False
    try:
        yield
    finally:
        st.enabled = saved


class Tensor:
    """A float64 array that can take part in a differentiation graph.

    Attributes:
        data: the value, always a float64 ``np.ndarray``.
        grad: accumulated gradient (same shape as ``data``) or None.
        requires_grad: whether operations on this tensor are recorded.
        node_id: index of the producing operation on its tape; None for leaves.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id: Optional[int] = None
        self._tape: Optional[Tape] = None

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self):
        return len(self.data)

    # -- operator sugar (implementations live in spdda.ops) -------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.index(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Wrap an op's forward value and record it when any input needs a gradient."""
    needs = any(t.requires_grad for t in inputs)
    tape = current_tape() if needs else None
    out = Tensor(data, requires_grad=tape is not None)
    if tape is not None:
        tape.record(out, tuple(inputs), backward)
    return out


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable leaf.

    Repeated calls without :func:`zero_grads` add up, which is what lets a
    tensor used on two branches (or two losses) collect both contributions.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    seed = np.ones_like(root.data)
    root.grad = seed.copy() if root.grad is None else root.grad + seed
    if root._tape is None or root.node_id is None:
        return
    tape = root._tape
    pending: dict[int, np.ndarray] = {id(root): seed}
    for rec in reversed(tape.records[: root.node_id + 1]):
        g = pending.pop(id(rec.output), None)
        if g is None:
            continue
        grads = rec.backward(g)
        for inp, gi in zip(rec.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp._tape is tape and inp.node_id is not None:
                key = id(inp)
                pending[key] = pending[key] + gi if key in pending else gi
            else:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
