"""Tensors, parameters and the gradient tape."""

import itertools
import logging
from collections.abc import Callable, Sequence
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Any

import numpy as np

from conveyor_vla.errors import NonFiniteError, ShapeMismatchError, TapeConsumedError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_ids = itertools.count()
# Each thread starts with an empty context, so worker threads never record.
_active_tape: ContextVar["GradTape | None"] = ContextVar("active_tape", default=None)


class Tensor:
    """Dense real array with an identity used by the tape.

    Tensors produced by ops are never mutated afterwards; only `Parameter`
    leaves are reassigned, and only by optimizers or gradient checks.
    """

    __slots__ = ("data", "requires_grad", "id", "name", "tape")
    __array_priority__ = 1000

    def __init__(
        self,
        data: Any,
        *,
        requires_grad: bool = False,
        name: str | None = None,
        dtype: Any = None,
    ) -> None:
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self.name = name
        self.tape: GradTape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        grad = f"requires_grad={self.requires_grad}"
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, {grad})"

    # Operators delegate to the primitives in `ops`.
    def __add__(self, other: Any) -> "Tensor":
        return ops.add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        return ops.add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        return ops.sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        return ops.sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        return ops.mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        return ops.mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        return ops.div(self, other)

    def __neg__(self) -> "Tensor":
        return ops.neg(self)

    def __matmul__(self, other: Any) -> "Tensor":
        return ops.matmul(self, other)

    def __rmatmul__(self, other: Any) -> "Tensor":
        return ops.matmul(other, self)

    def __getitem__(self, key: Any) -> "Tensor":
        return ops.index(self, key)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], tuple | list):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return ops.transpose(self, axes)

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        return ops.sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        return ops.mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """Trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data: Any, *, name: str | None = None, dtype: Any = None) -> None:
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)

    def assign(self, value: np.ndarray) -> None:
        """Replace the values, keeping shape and dtype."""
        arr = np.asarray(value, dtype=self.data.dtype)
        if arr.shape != self.data.shape:
            raise ShapeMismatchError(
                f"cannot assign {arr.shape} to parameter {self.name!r} of shape {self.data.shape}"
            )
        self.data = arr


@dataclass(frozen=True)
class _Node:
    op: str
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn


class GradTape:
    """Records primitive ops while active and replays them in reverse once.

        with GradTape() as tape:
            loss = model_loss(...)
        grads = tape.backward(loss)
    """

    def __init__(self) -> None:
        self._nodes: list[_Node] = []
        self._consumed = False
        self._token = None

    def __enter__(self) -> "GradTape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc: object) -> None:
        if self._token is not None:
            _active_tape.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def ops(self) -> list[str]:
        """Names of recorded ops in recording order."""
        return [node.op for node in self._nodes]

    @property
    def consumed(self) -> bool:
        return self._consumed

    def _record(
        self, op: str, out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn
    ) -> None:
        if self._consumed:
            raise TapeConsumedError("tape was already replayed; record on a new GradTape")
        out.tape = self
        self._nodes.append(_Node(op, out, inputs, backward))

    def backward(self, loss: Tensor, *, retain_intermediate: bool = False) -> dict[int, Tensor]:
        """Gradients of a scalar loss keyed by tensor id.

        Leaves that require gradients always get an entry when reachable;
        intermediate results only with `retain_intermediate`.
        """
        if self._consumed:
            raise TapeConsumedError("backward already ran on this tape")
        if loss.size != 1:
            raise ShapeMismatchError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True
        if not loss.requires_grad:
            self._nodes.clear()
            return {}

        grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
        kept: dict[int, np.ndarray] = {}
        for node in reversed(self._nodes):
            g = grads.pop(node.output.id, None)
            if g is None:
                continue
            if retain_intermediate:
                kept[node.output.id] = g
            for inp, gi in zip(node.inputs, node.backward(g), strict=True):
                if gi is None or not inp.requires_grad:
                    continue
                if gi.shape != inp.shape:
                    raise ShapeMismatchError(
                        f"{node.op}: gradient shape {gi.shape} != input shape {inp.shape}"
                    )
                prev = grads.get(inp.id)
                grads[inp.id] = gi if prev is None else prev + gi
        self._nodes.clear()
        grads.update(kept)
        return {tid: Tensor(g) for tid, g in grads.items()}


def record(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    """Wrap an op result, rejecting non-finite values, and record it on the active tape."""
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(data)
    tape = _active_tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._record(op, out, inputs, backward)
    return out


def active_tape() -> GradTape | None:
    return _active_tape.get()


def backward(loss: Tensor, *, retain_intermediate: bool = False) -> dict[int, Tensor]:
    """Replay the tape that recorded `loss`."""
    if loss.tape is None:
        if loss.requires_grad and not isinstance(loss, Parameter):
            raise TapeConsumedError("loss was not recorded on a tape")
        return {}
    return loss.tape.backward(loss, retain_intermediate=retain_intermediate)


def stop_gradient(x: Tensor | np.ndarray) -> Tensor:
    """Constant view of `x`; nothing upstream receives gradient through it."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return Tensor(data)


from conveyor_vla.numerics import ops  # noqa: E402
