"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

Define-by-run: every operation records its parents and a backward closure on
the output tensor; ``backward`` walks the tape in reverse topological order
and accumulates gradients onto leaves with ``requires_grad``. The tape is
released as part of the backward pass, so graphs are single-use.

Leaves that a loss cannot reach keep ``grad is None`` ("untouched"), which is
what the optimizer uses to leave frozen or unreferenced parameter groups
bit-identical.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform to the requested operation."""


class Tensor:
    """A dense float64 array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        """Reset to the untouched state (grad absent, not a zero array)."""
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:  # pragma: no cover
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.shape}, requires_grad={self.requires_grad})"


def constant(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape} does not conform")
    out_data = a.data @ b.data

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad or a._parents:
            a.accumulate(g @ b.data.T)
        if b.requires_grad or b._parents:
            b.accumulate(a.data.T @ g)

    return _node(out_data, (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also supports the row-broadcast (n, d) + (d,) bias case."""
    bias_case = a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]
    if not bias_case and a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} + {b.shape} does not conform")
    out_data = a.data + b.data

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad or a._parents:
            a.accumulate(g)
        if b.requires_grad or b._parents:
            b.accumulate(g.sum(axis=0) if bias_case else g)

    return _node(out_data, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: {a.shape} - {b.shape} does not conform")
    out_data = a.data - b.data

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad or a._parents:
            a.accumulate(g)
        if b.requires_grad or b._parents:
            b.accumulate(-g)

    return _node(out_data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors, or (n, m) * (m,) row weights."""
    row_case = a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]
    if not row_case and a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} * {b.shape} does not conform")
    out_data = a.data * b.data

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad or a._parents:
            a.accumulate(g * b.data)
        if b.requires_grad or b._parents:
            gb = g * a.data
            b.accumulate(gb.sum(axis=0) if row_case else gb)

    return _node(out_data, (a, b), backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out_data = a.data * c

    def backward_fn(g: np.ndarray) -> None:
        a.accumulate(g * c)

    return _node(out_data, (a,), backward_fn)


def square(a: Tensor) -> Tensor:
    out_data = a.data * a.data

    def backward_fn(g: np.ndarray) -> None:
        a.accumulate(g * (2.0 * a.data))

    return _node(out_data, (a,), backward_fn)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward_fn(g: np.ndarray) -> None:
        a.accumulate(g * (1.0 - out_data * out_data))

    return _node(out_data, (a,), backward_fn)


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    if not parts:
        raise ShapeError("concat: no operands")
    ndim = parts[0].data.ndim
    for p in parts:
        if p.data.ndim != ndim:
            raise ShapeError(
                f"concat: mixed ranks {[q.shape for q in parts]} along axis {axis}"
            )
    try:
        out_data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[p.shape for p in parts]} along axis {axis}") from exc
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad or p._parents:
                idx = [slice(None)] * ndim
                idx[axis] = slice(lo, hi)
                p.accumulate(g[tuple(idx)])

    return _node(out_data, tuple(parts), backward_fn)


def sum_all(a: Tensor) -> Tensor:
    out_data = np.asarray(a.data.sum())

    def backward_fn(g: np.ndarray) -> None:
        a.accumulate(np.full(a.shape, float(g)))

    return _node(out_data, (a,), backward_fn)


def mean_all(a: Tensor) -> Tensor:
    if a.size == 0:
        raise ShapeError("mean_all: empty tensor")
    n = a.size
    out_data = np.asarray(a.data.mean())

    def backward_fn(g: np.ndarray) -> None:
        a.accumulate(np.full(a.shape, float(g) / n))

    return _node(out_data, (a,), backward_fn)


def mean_squared_error(pred: Tensor, target: Tensor) -> Tensor:
    """reduce-mean of elementwise squared error."""
    return mean_all(square(sub(pred, target)))


def backward(output: Tensor) -> None:
    """Populate gradients of every reachable ``requires_grad`` leaf.

    The output must be scalar. The recorded tape is dismantled as it is
    consumed, so a second backward on the same graph is not possible.
    """
    if output.size != 1:
        raise ShapeError(f"backward: output has shape {output.shape}, expected scalar")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    output.grad = np.ones_like(output.data)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)
        if node._parents:
            # interior node: free the tape and the accumulated gradient
            node._parents = ()
            node._backward_fn = None
            node.grad = None
