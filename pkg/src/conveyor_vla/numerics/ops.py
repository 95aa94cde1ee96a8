"""Differentiable primitives.

Every primitive computes its forward with numpy, rejects non-finite results
and registers a backward closure on the active tape. Composite helpers
(`mean`, `mse`, `linear`) are built from primitives only.
"""

import math
from collections.abc import Sequence
from typing import Any

import numpy as np

from conveyor_vla.errors import ShapeMismatchError, UnattendableTokenError
from conveyor_vla.numerics.tensor import Tensor, record


def as_tensor(x: Any, like: Tensor | None = None) -> Tensor:
    """Constant tensor from an array-like, in the dtype of `like` when given."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype if like is not None else None))


def _pair(a: Any, b: Any) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _axes(axis: int | Sequence[int] | None, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


# -- elementwise ------------------------------------------------------------


def add(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)

    def backward(g: np.ndarray):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return record("add", a.data + b.data, (a, b), backward)


def sub(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)

    def backward(g: np.ndarray):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.shape) if b.requires_grad else None,
        )

    return record("sub", a.data - b.data, (a, b), backward)


def mul(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)

    def backward(g: np.ndarray):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return record("mul", a.data * b.data, (a, b), backward)


def div(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)

    def backward(g: np.ndarray):
        return (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None,
        )

    return record("div", a.data / b.data, (a, b), backward)


def neg(x: Tensor) -> Tensor:
    return record("neg", -x.data, (x,), lambda g: (-g,))


def square(x: Tensor) -> Tensor:
    return record("square", x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return record("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return record("silu", x.data * s, (x,), lambda g: (g * s * (1.0 + x.data * (1.0 - s)),))


# -- linear algebra and reductions ----------------------------------------


def matmul(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul: {a.shape} @ {b.shape}")

    def backward(g: np.ndarray):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return record("matmul", np.matmul(a.data, b.data), (a, b), backward)


def sum_(x: Tensor, axis: int | Sequence[int] | None = None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, x.ndim)

    def backward(g: np.ndarray):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return record("sum", x.data.sum(axis=axes, keepdims=keepdims), (x,), backward)


def mean(x: Tensor, axis: int | Sequence[int] | None = None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, x.ndim)
    count = math.prod(x.shape[a] for a in axes)
    return mul(sum_(x, axis=axes, keepdims=keepdims), 1.0 / count)


def mse(pred: Tensor, target: Any) -> Tensor:
    """Mean squared error over every element."""
    return mean(square(sub(pred, target)))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ W (+ b) with W laid out (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# -- shape -------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(tuple(shape))
    return record("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)
    return record("transpose", out, (x,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeMismatchError("concat of an empty sequence")
    if len(tensors) == 1:
        return tensors[0]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray):
        parts = np.split(g, cuts, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, tensors, strict=True))

    return record("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def index(x: Tensor, key: Any) -> Tensor:
    """Basic (slice/integer) indexing."""

    def backward(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[key] = g
        return (full,)

    return record("index", x.data[key], (x,), backward)


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: rows of `table` at integer `ids` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g: np.ndarray):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return record("take_rows", table.data[ids], (table,), backward)


# -- transformer kernels ---------------------------------------------------


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """x / sqrt(mean(x^2) + eps) * gain over the last axis."""
    x, gain = _pair(x, gain)
    if x.shape[-1] != gain.shape[-1]:
        raise ShapeMismatchError(f"rms_norm: input width {x.shape[-1]} != gain {gain.shape[-1]}")
    r = 1.0 / np.sqrt((x.data * x.data).mean(axis=-1, keepdims=True) + eps)
    xhat = x.data * r

    def backward(g: np.ndarray):
        gx = gg = None
        if gain.requires_grad:
            gg = _unbroadcast(g * xhat, gain.shape)
        if x.requires_grad:
            gh = g * gain.data
            gx = r * (gh - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg

    return record("rms_norm", xhat * gain.data, (x, gain), backward)


def masked_softmax(scores: Any, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to `mask`; masked entries are exactly 0."""
    scores = as_tensor(scores)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[-2:] != scores.shape[-2:] and mask.shape != scores.shape:
        raise ShapeMismatchError(f"mask {mask.shape} does not match scores {scores.shape}")
    attendable = mask.any(axis=-1)
    if not attendable.all():
        row = int(np.argwhere(~attendable)[0][-1])
        raise UnattendableTokenError(f"unattendable token: mask row {row} has no true entry")
    full = np.broadcast_to(mask, scores.shape)
    z = np.where(full, scores.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return record("masked_softmax", p, (scores,), backward)


def _rotate_half(v: np.ndarray) -> np.ndarray:
    h = v.shape[-1] // 2
    return np.concatenate([-v[..., h:], v[..., :h]], axis=-1)


def _rotate_half_t(v: np.ndarray) -> np.ndarray:
    h = v.shape[-1] // 2
    return np.concatenate([v[..., h:], -v[..., :h]], axis=-1)


def rope(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotary position encoding on the last axis; cos/sin broadcast as (T, head_dim)."""
    if x.shape[-1] % 2 or cos.shape[-1] != x.shape[-1]:
        raise ShapeMismatchError(f"rope: head dim {x.shape[-1]} vs table {cos.shape}")
    cos = cos.astype(x.dtype, copy=False)
    sin = sin.astype(x.dtype, copy=False)
    out = x.data * cos + _rotate_half(x.data) * sin
    return record("rope", out, (x,), lambda g: (g * cos + _rotate_half_t(g * sin),))
