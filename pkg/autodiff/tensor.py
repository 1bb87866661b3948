"""Dense float64 tensors with reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded in order;
:func:`backward` replays the tape in reverse exactly once per node. Tapes are
thread-local, so each training thread owns its own record.
"""

import threading
from contextlib import contextmanager
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np

from errors import CMGError, NonScalarLoss


class Tensor:
    """Value-semantic n-d array; gradients are filled in by :func:`backward`."""

    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, name: Optional[str] = None):
        self.value = np.array(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float(self.value)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"{type(self).__name__}(shape={self.shape}{label})"

    # operator sugar; implementations live in autodiff.ops
    def __add__(self, other):
        from autodiff import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from autodiff import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from autodiff import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from autodiff import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from autodiff import ops
        return ops.div(self, other)

    def __neg__(self):
        from autodiff import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from autodiff import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from autodiff import ops
        return ops.slice_(self, index)


class Parameter(Tensor):
    """Trainable tensor. Frozen parameters still pass gradients but are never updated."""

    def __init__(self, value, name: Optional[str] = None, frozen: bool = False):
        super().__init__(value, requires_grad=True, name=name)
        self.frozen = frozen
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)


class Node(NamedTuple):
    output: Tensor
    inputs: Sequence[Tensor]
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of executed operations."""

    def __init__(self):
        self.nodes: List[Node] = []

    def record(self, output: Tensor, inputs: Sequence[Tensor], vjp) -> None:
        self.nodes.append(Node(output, tuple(inputs), vjp))

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    """Suspend recording inside an enclosing tape."""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf tensor."""
    tape = tape if tape is not None else active_tape()
    if loss.size != 1:
        raise NonScalarLoss(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None or not tape.nodes:
        raise CMGError("backward called without a recorded tape")

    produced = {id(node.output) for node in tape.nodes}
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in produced:
                grads[key] = gi if key not in grads else grads[key] + gi
            elif inp.grad is None:
                inp.grad = np.array(gi, dtype=np.float64)
            else:
                inp.grad = inp.grad + gi
