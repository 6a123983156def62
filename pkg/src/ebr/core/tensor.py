"""Dense tensors and a define-by-run reverse-mode graph.

A :class:`Tensor` wraps a numpy array. Operations in :mod:`ebr.core.ops`
record a parent list and a backward closure on their output whenever one of
the inputs requires a gradient, so the graph is rebuilt for every batch.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "backward",
    "checked",
    "no_grad",
    "is_grad_enabled",
    "rng",
    "NonFiniteError",
]

OP_KINDS = (
    "input", "conv1d", "conv2d", "transpose-conv", "dense", "relu", "avgpool",
    "upsample", "add", "sub", "scale", "mse-masked", "reshape", "sum",
    "sum-squares", "softmax-xent",
)

_GRAD_ENABLED = True
_CHECKED = False


class NonFiniteError(FloatingPointError):
    """Raised when NaN or Inf shows up where finite values are required."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation mode)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def checked():
    """Reject non-finite tensor data at construction inside the block."""
    global _CHECKED
    prev, _CHECKED = _CHECKED, True
    try:
        yield
    finally:
        _CHECKED = prev


def rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox4x64 counter-based generator keyed by ``seed`` and a stream path.

    Philox output depends only on (key, counter), so streams reproduce
    bit-for-bit across platforms and numpy versions that keep the algorithm.
    """
    ss = np.random.SeedSequence([int(seed), *(int(s) for s in stream)])
    return np.random.Generator(np.random.Philox(ss))


class Tensor:
    """Graph node holding a value and, after :func:`backward`, a gradient."""

    __slots__ = ("data", "grad", "op", "parents", "requires_grad", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "input",
                 parents: Sequence["Tensor"] = (), backward_fn: Callable | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        if _CHECKED and not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite entries in {op} tensor of shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.op = op
        self.parents = tuple(parents)
        self.requires_grad = bool(requires_grad)
        self._backward = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the op functions do the work
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, c):
        from . import ops
        return ops.scale(self, c)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        if dtype is not None and x.dtype != dtype:
            raise TypeError(f"tensor dtype {x.dtype} does not match expected {np.dtype(dtype)}")
        return x
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return Tensor(arr)


def make_node(value: np.ndarray, op: str, parents: Sequence[Tensor],
              backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap an op result; record the graph edge only if something needs it."""
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(value, op=op)
    return Tensor(value, requires_grad=True, op=op, parents=parents, backward_fn=backward_fn)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

    Gradients of interior nodes are transient; leaf gradients accumulate
    across calls until :meth:`Tensor.zero_grad`.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
