"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Each operation records its parents and a vector-Jacobian closure on the
result node, so the computation graph is rebuilt on every forward pass.
Tensors are immutable once created and safe to share; gradients are returned
from :func:`backward` rather than stored on nodes.
"""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .errors import ContractError

Array = np.ndarray


def _as_f64(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    __slots__ = ("data", "op", "parents", "vjp")

    def __init__(self, data, op: str = "leaf", parents: tuple = (), vjp: Callable | None = None):
        self.data = _as_f64(data)
        self.op = op
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def tensor(x) -> Tensor:
    """Wrap data as a leaf node."""
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Reduce a broadcast gradient back to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise and structural ops -------------------------------------

def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data + b.data
    return Tensor(out, "add", (a, b),
                  lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data - b.data
    return Tensor(out, "sub", (a, b),
                  lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def neg(a) -> Tensor:
    a = tensor(a)
    return Tensor(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data * b.data
    return Tensor(out, "mul", (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.data.shape),
                             _unbroadcast(g * a.data, b.data.shape)))


def matmul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data @ b.data
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractError("matmul expects 2-D operands")

    def vjp(g):
        return (g @ b.data.T, a.data.T @ g)

    return Tensor(out, "matmul", (a, b), vjp)


def tanh(a) -> Tensor:
    a = tensor(a)
    out = np.tanh(a.data)
    return Tensor(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def exp(a) -> Tensor:
    a = tensor(a)
    out = np.exp(a.data)
    return Tensor(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = tensor(a)
    return Tensor(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = tensor(a)
    out = np.sqrt(a.data)
    return Tensor(out, "sqrt", (a,), lambda g: (g * (0.5 / out),))


def sin(a) -> Tensor:
    a = tensor(a)
    return Tensor(np.sin(a.data), "sin", (a,), lambda g: (g * np.cos(a.data),))


def square(a) -> Tensor:
    a = tensor(a)
    return Tensor(a.data * a.data, "square", (a,), lambda g: (g * (2.0 * a.data),))


def tsum(a, axis=None) -> Tensor:
    a = tensor(a)
    out = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gx = np.expand_dims(g, axis)
        return (np.broadcast_to(gx, a.data.shape).copy(),)

    return Tensor(out, "sum", (a,), vjp)


def tmean(a, axis=None) -> Tensor:
    a = tensor(a)
    out = a.data.mean(axis=axis)
    count = a.data.size if axis is None else a.data.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.data.shape).copy(),)
        gx = np.expand_dims(g / count, axis)
        return (np.broadcast_to(gx, a.data.shape).copy(),)

    return Tensor(out, "mean", (a,), vjp)


def concat(parts: Iterable, axis: int = -1) -> Tensor:
    parts = [tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out, "concat", tuple(parts), vjp)


def take(a, key) -> Tensor:
    """Basic (slice) indexing with gradient scattered back into place."""
    a = tensor(a)
    out = a.data[key]

    def vjp(g):
        gx = np.zeros_like(a.data)
        gx[key] = g
        return (gx,)

    return Tensor(out, "take", (a,), vjp)


def take_rows(table, idx) -> Tensor:
    """Row gather (embedding lookup); idx is a constant integer array."""
    table = tensor(table)
    idx = np.asarray(idx)
    out = table.data[idx]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return Tensor(out, "take_rows", (table,), vjp)


def reshape(a, shape) -> Tensor:
    a = tensor(a)
    out = a.data.reshape(shape)
    return Tensor(out, "reshape", (a,), lambda g: (g.reshape(a.data.shape),))


# -- graph traversal and backward pass -----------------------------------

class Graph:
    """Topologically ordered view of the nodes reachable from an output."""

    __slots__ = ("nodes", "index")

    def __init__(self, nodes: list):
        self.nodes = nodes
        self.index = {id(n): i for i, n in enumerate(nodes)}

    def node_id(self, t: Tensor) -> int:
        return self.index[id(t)]


def graph_of(output: Tensor) -> Graph:
    """Iterative post-order walk; every node appears after its parents."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return Graph(order)


class Grads:
    """Gradient lookup for one backward pass; untouched leaves read as zero."""

    __slots__ = ("_table",)

    def __init__(self, table: dict):
        self._table = table

    def wrt(self, t: Tensor) -> Array:
        g = self._table.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g


def backward(output: Tensor) -> Grads:
    """Reverse-mode sweep from a scalar output over its recorded graph."""
    if output.data.size != 1:
        raise ContractError(f"backward requires a scalar output, got shape {output.data.shape}")
    graph = graph_of(output)
    table: dict[int, Array] = {id(output): np.ones_like(output.data)}
    for node in reversed(graph.nodes):
        g = table.get(id(node))
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            acc = table.get(id(parent))
            table[id(parent)] = pg if acc is None else acc + pg
    return Grads(table)


def finite_diff_grad(f: Callable[[Array], float], x, h: float = 1e-5) -> Array:
    """Central-difference gradient of a scalar function, O(h^2) error."""
    if h <= 0:
        raise ContractError("finite_diff_grad requires h > 0")
    x = _as_f64(x).copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ContractError("finite_diff_grad: function evaluated to a non-finite value")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
