"""Reverse-mode differentiation over dense 2-D float64 arrays.

Graphs are built eagerly: every kernel computes its value on construction
and records a vector-Jacobian product closure. ``forward`` validates and
returns a scalar root, ``backward`` walks the graph in reverse topological
order and accumulates gradients into every node.

Broadcasting is deliberately absent. The only shape-mixing kernel is
``row_mul`` (scale each row of an N x C matrix by an N x 1 column); every
other mismatch raises :class:`ShapeError`.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

from ._backend import kernels as _k

__all__ = [
    "DiffNode", "ShapeError", "DiffError", "leaf", "constant", "make_node",
    "forward", "backward", "finite_difference_check", "set_deterministic",
    "matmul", "transpose", "add", "sub", "mul", "scale", "add_scalar",
    "exp", "log", "sigmoid", "lgamma", "digamma", "row_sum", "col_sum",
    "total", "trace", "frob_sq", "power", "absolute", "row_mul", "clip",
]


class DiffError(RuntimeError):
    pass


class ShapeError(DiffError, ValueError):
    def __init__(self, kernel, *shapes):
        self.kernel = kernel
        self.shapes = shapes
        super().__init__(f"{kernel}: incompatible shapes {', '.join(map(str, shapes))}")


_DETERMINISTIC = True
_POOL: ThreadPoolExecutor | None = None


def set_deterministic(flag: bool = True) -> None:
    """Toggle between sequential reductions and row-chunked threaded ones."""
    global _DETERMINISTIC
    _DETERMINISTIC = bool(flag)


def _reduce_rows(a: np.ndarray, axis):
    # parallel mode: partial sums over row chunks, combined as they finish
    if _DETERMINISTIC or a.shape[0] < 4096:
        return a.sum(axis=axis, keepdims=axis is not None)
    global _POOL
    if _POOL is None:
        _POOL = ThreadPoolExecutor()
    chunks = np.array_split(a, 8, axis=0)
    if axis == 1:
        return np.concatenate(list(_POOL.map(lambda c: c.sum(axis=1, keepdims=True), chunks)))
    acc = None
    for part in _POOL.map(lambda c: c.sum(axis=axis, keepdims=axis is not None), chunks):
        acc = part if acc is None else acc + part
    return acc


class DiffNode:
    """A graph node: a cached 2-D value, its gradient and the producing op."""

    __slots__ = ("value", "grad", "parents", "vjp", "op", "name", "requires_grad", "_ran")

    def __init__(self, value, parents=(), vjp=None, op="leaf", name=None, requires_grad=False):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        if value.ndim != 2:
            raise ShapeError(op, value.shape)
        self.value = value
        self.grad = np.zeros_like(value)
        self.parents = tuple(parents)
        self.vjp = vjp
        self.op = op
        self.name = name
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self._ran = False

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = self.name or self.op
        return f"DiffNode({label}, shape={self.shape})"

    # operator sugar for readability of loss code
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, DiffNode):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def leaf(value, name=None) -> DiffNode:
    """A differentiable input."""
    return DiffNode(np.array(value, dtype=np.float64), op="leaf", name=name, requires_grad=True)


def constant(value, name=None) -> DiffNode:
    return DiffNode(value, op="const", name=name, requires_grad=False)


def make_node(value, parents, vjp, op) -> DiffNode:
    """Wrap a custom kernel. ``vjp(g)`` returns one gradient per parent (or None)."""
    return DiffNode(value, parents, vjp, op=op)


def _as_node(x):
    return x if isinstance(x, DiffNode) else constant(x)


def _same(kernel, a, b):
    if a.shape != b.shape:
        raise ShapeError(kernel, a.shape, b.shape)


# ---------------------------------------------------------------- kernels

def matmul(a, b):
    a, b = _as_node(a), _as_node(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    av, bv = a.value, b.value
    return make_node(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def transpose(a):
    a = _as_node(a)
    return make_node(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


def add(a, b):
    a, b = _as_node(a), _as_node(b)
    _same("add", a, b)
    return make_node(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = _as_node(a), _as_node(b)
    _same("sub", a, b)
    return make_node(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = _as_node(a), _as_node(b)
    _same("mul", a, b)
    av, bv = a.value, b.value
    return make_node(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a, c: float):
    a = _as_node(a)
    c = float(c)
    return make_node(a.value * c, (a,), lambda g: (g * c,), "scale")


def add_scalar(a, c: float):
    a = _as_node(a)
    return make_node(a.value + float(c), (a,), lambda g: (g,), "add_scalar")


def exp(a):
    a = _as_node(a)
    out = np.exp(a.value)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = _as_node(a)
    av = a.value
    return make_node(np.log(av), (a,), lambda g: (g / av,), "log")


def sigmoid(a):
    a = _as_node(a)
    # split by sign so neither branch overflows
    v = a.value
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def lgamma(a):
    a = _as_node(a)
    av = a.value
    return make_node(_k.lgamma(av), (a,), lambda g: (g * _k.digamma(av),), "lgamma")


def digamma(x) -> np.ndarray:
    """Plain (non-differentiable) digamma of an array."""
    return _k.digamma(np.asarray(x, dtype=np.float64))


def row_sum(a):
    a = _as_node(a)
    n, m = a.shape
    return make_node(_reduce_rows(a.value, 1), (a,),
                     lambda g: (np.repeat(g, m, axis=1),), "row_sum")


def col_sum(a):
    a = _as_node(a)
    n, m = a.shape
    return make_node(_reduce_rows(a.value, 0), (a,),
                     lambda g: (np.repeat(g, n, axis=0),), "col_sum")


def total(a):
    a = _as_node(a)
    shape = a.shape
    return make_node(np.asarray(_reduce_rows(a.value, None)).reshape(1, 1), (a,),
                     lambda g: (np.full(shape, g[0, 0]),), "total")


def trace(a):
    a = _as_node(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError("trace", a.shape)
    n = a.shape[0]
    return make_node(np.trace(a.value).reshape(1, 1), (a,),
                     lambda g: (np.eye(n) * g[0, 0],), "trace")


def frob_sq(a):
    a = _as_node(a)
    av = a.value
    return make_node(np.sum(av * av).reshape(1, 1), (a,),
                     lambda g: (2.0 * g[0, 0] * av,), "frob_sq")


def power(a, p: float):
    a = _as_node(a)
    av = a.value
    p = float(p)
    return make_node(av ** p, (a,), lambda g: (g * p * av ** (p - 1.0),), "power")


def absolute(a):
    a = _as_node(a)
    av = a.value
    return make_node(np.abs(av), (a,), lambda g: (g * np.sign(av),), "absolute")


def row_mul(a, v):
    """Scale row i of ``a`` (N x C) by ``v[i]`` (v is N x 1)."""
    a, v = _as_node(a), _as_node(v)
    if v.shape != (a.shape[0], 1):
        raise ShapeError("row_mul", a.shape, v.shape)
    av, vv = a.value, v.value
    return make_node(av * vv, (a, v),
                     lambda g: (g * vv, np.sum(g * av, axis=1, keepdims=True)), "row_mul")


def clip(a, lo: float, hi: float):
    """Clamp to [lo, hi]; gradient passes only strictly inside the range."""
    a = _as_node(a)
    av = a.value
    inside = ((av > lo) & (av < hi)).astype(np.float64)
    return make_node(np.clip(av, lo, hi), (a,), lambda g: (g * inside,), "clip")


# ---------------------------------------------------------------- driver

def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def forward(root: DiffNode) -> float:
    """Return the scalar value of a loss graph; marks it ready for backward."""
    if root.shape != (1, 1):
        raise ShapeError("forward", root.shape)
    val = float(root.value[0, 0])
    root._ran = True
    return val


def backward(root: DiffNode) -> dict:
    """Accumulate d(root)/d(node) into every node; return {leaf: grad}."""
    if not root._ran:
        raise DiffError("backward called before forward on this root")
    order = _topo(root)
    for node in order:
        node.grad = np.zeros_like(node.value)
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.vjp is None or not node.requires_grad:
            continue
        pgrads = node.vjp(node.grad)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            p.grad += pg
    return {n: n.grad for n in order if n.op == "leaf" and n.requires_grad}


def finite_difference_check(build: Callable[[DiffNode], DiffNode], value, epsilon: float = 1e-6) -> float:
    """Max relative error between the analytic gradient and central differences.

    ``build`` maps a leaf node to a scalar loss node; it is re-invoked on
    perturbed copies of ``value``.
    """
    if not 0.0 < epsilon <= 1e-3:
        raise ValueError("epsilon must lie in (0, 1e-3]")
    base = np.array(value, dtype=np.float64, copy=True)
    if base.ndim != 2:
        base = base.reshape(1, -1) if base.ndim < 2 else base
    x = leaf(base)
    root = build(x)
    forward(root)
    backward(root)
    analytic = x.grad.copy()

    worst = 0.0
    for idx in np.ndindex(*base.shape):
        vals = []
        for sgn in (1.0, -1.0):
            pert = base.copy()
            pert[idx] += sgn * epsilon
            f = forward(build(constant(pert)))
            if not np.isfinite(f):
                raise DiffError(f"non-finite loss when perturbing entry {idx}")
            vals.append(f)
        fd = (vals[0] - vals[1]) / (2.0 * epsilon)
        a = analytic[idx]
        worst = max(worst, abs(a - fd) / max(abs(a), 1e-12))
    return worst
