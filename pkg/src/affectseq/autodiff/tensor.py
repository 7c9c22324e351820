"""Reverse-mode differentiation over numpy arrays via an explicit tape.

Every primitive computes its forward value eagerly and appends one entry to
the module's tape: the output tensor plus, per differentiable input, a
closure mapping the output adjoint to that input's adjoint contribution.
``backward`` walks the tape in exact reverse application order, accumulating
adjoints additively at fan-out, and adds the result into ``.grad`` of every
tensor that requires gradients (so repeated backward calls accumulate).

The tape is single-writer: one forward/backward sequence at a time.  Long
loops should call :func:`clear_tape` once per step to release graph memory.
Arrays keep whatever float dtype they were given; tests run the engine in
64-bit, training defaults to 32-bit.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

VjpFn = Callable[[np.ndarray], np.ndarray]


class Tape:
    """Ordered record of primitive applications, sufficient to replay adjoints."""

    __slots__ = ("_entries",)

    def __init__(self):
        self._entries: list[tuple["Tensor", list[tuple["Tensor", VjpFn]]]] = []

    def record(self, out: "Tensor", pairs: list[tuple["Tensor", VjpFn]]) -> None:
        self._entries.append((out, pairs))

    def clear(self) -> None:
        self._entries.clear()

    def __len__(self) -> int:
        return len(self._entries)


_TAPE = Tape()
_GRAD_ENABLED = True


def active_tape() -> Tape:
    return _TAPE


def clear_tape() -> None:
    """Drop all recorded entries (start of a fresh training step)."""
    _TAPE.clear()


@contextmanager
def no_grad():
    """Run forwards without recording; used on evaluation paths."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """An n-dimensional float array that can participate in backward passes."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return (
            f"Tensor(shape={self.shape}, dtype={self.dtype}, "
            f"requires_grad={self.requires_grad})"
        )

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return take(self, idx)

    # shape ops ------------------------------------------------------------
    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    """Wrap scalars/arrays as constant tensors, matching ``like``'s dtype."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def record(out: Tensor, pairs: Sequence[tuple[Tensor, VjpFn]]) -> Tensor:
    """Mark ``out`` differentiable and append its tape entry if tracking is on."""
    if _GRAD_ENABLED:
        tracked = [(t, fn) for t, fn in pairs if t.requires_grad]
        if tracked:
            out.requires_grad = True
            _TAPE.record(out, tracked)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum an adjoint over the axes numpy broadcasting introduced."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor the scalar ``loss`` depends on."""
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")

    adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}

    for out, pairs in reversed(_TAPE._entries):
        key = id(out)
        grad_out = adjoints.pop(key, None)
        if grad_out is None:
            continue  # not an ancestor of the loss
        holders.pop(key, None)
        _accumulate(out, grad_out)
        for tensor, vjp in pairs:
            contribution = vjp(grad_out)
            tkey = id(tensor)
            if tkey in adjoints:
                adjoints[tkey] = adjoints[tkey] + contribution
            else:
                adjoints[tkey] = contribution
                holders[tkey] = tensor

    # Leaves (and a loss that is itself a leaf) never appear as an entry output.
    for key, grad in adjoints.items():
        _accumulate(holders[key], grad)


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.array(grad, copy=True)
    else:
        tensor.grad = tensor.grad + grad


# ---------------------------------------------------------------------------
# arithmetic primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    out = Tensor(a.data + b.data)
    return record(out, [
        (a, lambda g: unbroadcast(g, a.shape)),
        (b, lambda g: unbroadcast(g, b.shape)),
    ])


def subtract(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    out = Tensor(a.data - b.data)
    return record(out, [
        (a, lambda g: unbroadcast(g, a.shape)),
        (b, lambda g: unbroadcast(-g, b.shape)),
    ])


def multiply(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    out = Tensor(a.data * b.data)
    return record(out, [
        (a, lambda g: unbroadcast(g * b.data, a.shape)),
        (b, lambda g: unbroadcast(g * a.data, b.shape)),
    ])


def divide(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    out_data = a.data / b.data
    out = Tensor(out_data)
    return record(out, [
        (a, lambda g: unbroadcast(g / b.data, a.shape)),
        (b, lambda g: unbroadcast(-g * out_data / b.data, b.shape)),
    ])


def power(a: Tensor, exponent: float) -> Tensor:
    """Elementwise ``a ** c`` for a constant exponent."""
    exponent = float(exponent)
    out = Tensor(a.data ** exponent)
    return record(out, [
        (a, lambda g: g * exponent * a.data ** (exponent - 1.0)),
    ])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch dimensions broadcast as in numpy."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have at least 2 dimensions")
    out = Tensor(a.data @ b.data)

    def grad_a(g):
        return unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)

    def grad_b(g):
        return unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)

    return record(out, [(a, grad_a), (b, grad_b)])


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def grad_a(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).astype(a.dtype, copy=False)

    return record(out, [(a, grad_a)])


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    scale = a.size / out.size

    def grad_a(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape) / scale).astype(a.dtype, copy=False)

    return record(out, [(a, grad_a)])


# ---------------------------------------------------------------------------
# structural primitives
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return record(out, [(a, lambda g: g.reshape(a.shape))])


def transpose(a: Tensor, axes=None) -> Tensor:
    out = Tensor(a.data.transpose(axes))
    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))
    return record(out, [(a, lambda g: g.transpose(inverse))])


def swapaxes(a: Tensor, axis_a: int, axis_b: int) -> Tensor:
    out = Tensor(np.swapaxes(a.data, axis_a, axis_b))
    return record(out, [(a, lambda g: np.swapaxes(g, axis_a, axis_b))])


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = Tensor(np.broadcast_to(a.data, shape).copy())
    return record(out, [(a, lambda g: unbroadcast(g, a.shape))])


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))

    pairs = []
    offset = 0
    for t in tensors:
        width = t.shape[axis]
        start = offset

        def grad_t(g, start=start, width=width):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, start + width)
            return g[tuple(index)]

        pairs.append((t, grad_t))
        offset += width
    return record(out, pairs)


def take(a: Tensor, idx) -> Tensor:
    """Basic or fancy indexing; the adjoint scatter-adds into the source."""
    out = Tensor(a.data[idx])

    def grad_a(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        return buf

    return record(out, [(a, grad_a)])
