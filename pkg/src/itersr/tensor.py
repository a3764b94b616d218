"""4-D tensor type with reverse-mode gradients for a fixed network topology.

Every value in the pipeline is an (n, c, h, w) array: images and feature
maps directly, convolution weights as (out, in, kh, kw), per-channel
parameters as (1, c, 1, 1), scalars as (1, 1, 1, 1).  Operations record a
backward closure only while gradients are enabled and at least one input
requires them, so inference runs without retaining activations.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator

import numpy as np

from .errors import ShapeError, StateError

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A 4-D array with an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64 if not isinstance(data, np.ndarray) else data.dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are (n, c, h, w); got {arr.ndim}-d array of shape {arr.shape}")
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, dtype=np.float64, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad)

    @staticmethod
    def full(shape, value: float, dtype=np.float64) -> "Tensor":
        return Tensor(np.full(shape, value, dtype=dtype))

    @staticmethod
    def scalar(value: float, dtype=np.float64, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.full((1, 1, 1, 1), value, dtype=dtype), requires_grad)

    # -- basic introspection --------------------------------------------------

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- gradient bookkeeping -------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != data shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def detach(self) -> "Tensor":
        """A graph-free view of the same data (used at truncation boundaries)."""
        return Tensor(self.data, requires_grad=False)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    # -- arithmetic (graph-recording) ------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)


def _make_node(data: np.ndarray, parents: tuple[Tensor, ...],
               backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return _make_node(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(-g)

    return _make_node(a.data - b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (no gradient for the constant)."""
    c = float(c)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(c * g)

    return _make_node(a.data * c, (a,), backward)


def mul_scalar(a: Tensor, s: Tensor) -> Tensor:
    """Multiply by a trainable scalar tensor of shape (1, 1, 1, 1)."""
    if s.data.size != 1:
        raise ShapeError(f"mul_scalar expects a scalar tensor, got shape {s.shape}")
    sval = s.data.reshape(())

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(sval * g)
        if s.requires_grad:
            s.accumulate_grad(np.sum(g * a.data).reshape(1, 1, 1, 1).astype(s.data.dtype))

    return _make_node(a.data * sval, (a, s), backward)


def backward(root: Tensor) -> None:
    """Reverse-mode sweep from a scalar node, freeing closures as it goes."""
    if root.data.size != 1:
        raise ShapeError("backward() starts from a scalar loss")
    if not root.requires_grad:
        raise StateError("backward() on a tensor with no recorded graph")

    # Iterative post-order topological sort over recorded parents.
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            # Release the closure and intermediate gradient to bound memory.
            node._backward = None
            node._parents = ()
            node.grad = None if node is not root else node.grad


class ParamStore:
    """Named trainable tensors with deterministic (lexicographic) iteration."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise StateError(f"duplicate parameter name {name!r}")
        t.requires_grad = True
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._params[name]

    def zero_grad(self) -> None:
        for _, t in self.items():
            t.zero_grad()

    def count(self) -> int:
        return sum(t.data.size for _, t in self.items())

    def checksum(self) -> float:
        """Order-stable digest of all parameter values (weight-sharing probes)."""
        return float(sum(np.sum(t.data, dtype=np.float64) for _, t in self.items()))
