"""Immutable dense tensors and a reverse-mode gradient tape.

Ops in :mod:`maunet.ops` produce new :class:`Tensor` values.  When a
:class:`Tape` is active (``with Tape() as tape:``) and at least one input
requires a gradient, the op appends a :class:`Node` holding a closure that maps
the output gradient to input gradients.  Nodes are appended in execution
order, which is a topological order of the graph, so :func:`backward` only
has to walk the list in reverse.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericalError, UsageError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_next_id = itertools.count(1)
_local = threading.local()


class Tensor:
    """A read-only ndarray with an identity.

    ``id`` is unique per process and is the key used by gradient maps.
    Tensors never change after construction; optimizers produce new ones.
    """

    __slots__ = ("data", "requires_grad", "id", "name")

    def __init__(self, data, dtype=None, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=dtype, copy=True)
        if arr.dtype not in FLOAT_DTYPES:
            if dtype is not None:
                raise DimensionError(f"unsupported dtype {arr.dtype}; use float32 or float64")
            arr = arr.astype(np.float64)
        _check_finite(arr, "tensor construction")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.id = next(_next_id)
        self.name = name

    @classmethod
    def _from_op(cls, arr: np.ndarray, op: str) -> "Tensor":
        """Wrap an op result without copying; rejects NaN/Inf."""
        _check_finite(arr, op)
        out = cls.__new__(cls)
        arr = np.asarray(arr)
        if not arr.flags.c_contiguous:  # ascontiguousarray would promote 0-d to 1-d
            arr = arr.copy(order="C")
        arr.flags.writeable = False
        out.data = arr
        out.requires_grad = False
        out.id = next(_next_id)
        out.name = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, id={self.id}{tag})"

    # Operator sugar; semantics live in maunet.ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def _check_finite(arr: np.ndarray, where: str) -> None:
    if arr.dtype.kind == "f" and not np.isfinite(arr).all():
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NumericalError(f"{bad} non-finite value(s) produced by {where}")


def check_same_dtype(*tensors: Tensor) -> np.dtype:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) != 1:
        raise DimensionError(f"mixed dtypes in one expression: {sorted(str(d) for d in dtypes)}")
    return dtypes.pop()


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    output: int
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    # Piecewise-smooth ops record which branch each element took (relu sign,
    # pooling argmax, clamp mask) so gradcheck can skip perturbations that
    # cross a kink.
    signature: np.ndarray | None = None


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)
    seed_id: int | None = None

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise UsageError("tapes must be exited in the reverse order they were entered")
        stack.pop()

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def signatures(self) -> list[np.ndarray]:
        return [n.signature for n in self.nodes if n.signature is not None]


def _tape_stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def record(
    op: str,
    out: np.ndarray,
    inputs: Sequence[Tensor],
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    signature: np.ndarray | None = None,
) -> Tensor:
    """Wrap ``out`` as a Tensor and, if needed, log it on the active tape."""
    result = Tensor._from_op(out, op)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        tape.record(Node(op, tuple(t.id for t in inputs), result.id, backward, signature))
    return result


def backward(tape: Tape, loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
    """Reverse-mode sweep from the scalar ``loss``.

    Returns ``{tensor id: dloss/dtensor}`` for every tensor the sweep reached.
    Tensors listed in ``wrt`` that the loss does not depend on are mapped to
    zero arrays.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape.seed_id = loss.id
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(node.output)
        if g is None:
            continue
        input_grads = node.backward(g)
        for tid, gi in zip(node.inputs, input_grads):
            if gi is None:
                continue
            prev = grads.get(tid)
            grads[tid] = gi if prev is None else prev + gi
    if wrt is not None:
        for t in wrt:
            if t.id not in grads:
                grads[t.id] = np.zeros_like(t.data)
    return grads
