"""Reverse-mode differentiation over a fixed, closed set of operations.

Graphs are built from :class:`Var` nodes produced by the functions in this
module.  :func:`backward` walks the graph once in reverse topological order;
any node whose ``op`` is not one of :data:`SUPPORTED_OPS` aborts the pass.
"""
from __future__ import annotations

import numpy as np

from . import numeric
from .errors import DimensionError, UnsupportedOperationError

SUPPORTED_OPS = frozenset({
    "leaf", "add", "sub", "mul", "matmul", "softmax_rows", "attention",
    "tanh", "silu", "sigmoid", "gather", "scatter", "mean", "sum",
})


class Var:
    __slots__ = ("value", "op", "parents", "_vjp", "name")

    def __init__(self, value, op="leaf", parents=(), vjp=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.op = op
        self.parents = tuple(parents)
        self._vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.value.shape

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Var{label} op={self.op} shape={self.shape}>"


def param(name, value) -> Var:
    return Var(np.array(value, dtype=np.float64), name=name)


def const(value) -> Var:
    return Var(value)


def _lift(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    return Var(a.value + b.value, "add", (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    return Var(a.value - b.value, "sub", (a, b),
               lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    return Var(a.value * b.value, "mul", (a, b),
               lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def matmul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    if b.value.ndim != 2:
        raise DimensionError(f"right operand must be 2-D, got {b.shape}")
    out = numeric.matmul(a.value, b.value)

    def vjp(g):
        ga = g @ b.value.T
        gb = a.value.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return Var(out, "matmul", (a, b), vjp)


def softmax_rows(a) -> Var:
    a = _lift(a)
    p = numeric.softmax_rows(a.value)

    def vjp(g):
        return (p * (g - np.sum(g * p, axis=-1, keepdims=True)),)

    return Var(p, "softmax_rows", (a,), vjp)


def attention(q, k, v, mask=None, n_heads: int = 1) -> Var:
    """Differentiable scaled dot-product attention; ``mask`` is a constant."""
    q, k, v = _lift(q), _lift(k), _lift(v)
    p = numeric.attention_weights(q.value, k.value, mask, n_heads)
    heads = n_heads > 1
    vv = numeric.split_heads(v.value, n_heads) if heads else v.value
    out = p @ vv
    scale = 1.0 / np.sqrt(q.shape[-1] // n_heads)

    def vjp(g):
        gh = numeric.split_heads(g, n_heads) if heads else g
        gv = np.swapaxes(p, -1, -2) @ gh
        gp = gh @ np.swapaxes(vv, -1, -2)
        gs = p * (gp - np.sum(gp * p, axis=-1, keepdims=True)) * scale
        qh = numeric.split_heads(q.value, n_heads) if heads else q.value
        kh = numeric.split_heads(k.value, n_heads) if heads else k.value
        gq = gs @ kh
        gk = np.swapaxes(gs, -1, -2) @ qh
        if heads:
            gq, gk, gv = (numeric.merge_heads(x) for x in (gq, gk, gv))
        return gq, gk, gv

    return Var(numeric.merge_heads(out) if heads else out, "attention", (q, k, v), vjp)


def tanh(a) -> Var:
    a = _lift(a)
    y = np.tanh(a.value)
    return Var(y, "tanh", (a,), lambda g: (g * (1.0 - y * y),))


def _logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Var:
    a = _lift(a)
    y = _logistic(a.value)
    return Var(y, "sigmoid", (a,), lambda g: (g * y * (1.0 - y),))


def silu(a) -> Var:
    a = _lift(a)
    s = _logistic(a.value)
    return Var(a.value * s, "silu", (a,), lambda g: (g * s * (1.0 + a.value * (1.0 - s)),))


NONLINEARITIES = {"tanh": tanh, "silu": silu, "sigmoid": sigmoid}


def gather(x, index, valid=None) -> Var:
    """Row gather ``x[index]`` (crop); invalid positions read as zero."""
    x = _lift(x)
    index = np.asarray(index)
    out = numeric.gather_rows(x.value, index, valid)

    def vjp(g):
        if valid is not None:
            g = g * valid[..., None]
        gx = np.zeros_like(x.value)
        np.add.at(gx, index.reshape(-1), g.reshape(-1, x.shape[-1]))
        return (gx,)

    return Var(out, "gather", (x,), vjp)


def scatter(src, src_index, dst_index, n_rows: int) -> Var:
    """Row scatter-add into a zero [n_rows, d] array (paste)."""
    src = _lift(src)
    out = numeric.scatter_rows(src.value, src_index, dst_index, n_rows)

    def vjp(g):
        flat = np.zeros((int(np.prod(src.shape[:-1])), src.shape[-1]))
        np.add.at(flat, src_index, g[dst_index])
        return (flat.reshape(src.shape),)

    return Var(out, "scatter", (src,), vjp)


def mean(a) -> Var:
    a = _lift(a)
    n = a.value.size
    return Var(np.mean(a.value), "mean", (a,), lambda g: (np.full(a.shape, g / n),))


def sum(a) -> Var:  # noqa: A001 - mirrors numpy naming
    a = _lift(a)
    return Var(np.sum(a.value), "sum", (a,), lambda g: (np.full(a.shape, g, dtype=np.float64),))


def _topo_order(root: Var) -> list[Var]:
    order, seen, stack = [], set(), [(root, False)]
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
    return order


def backward(loss: Var, params) -> dict[str, np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. ``params`` (dict name->Var or list of named Vars)."""
    if loss.value.size != 1:
        raise DimensionError(f"loss must be scalar, got shape {loss.shape}")
    if not isinstance(params, dict):
        params = {p.name: p for p in params}
    order = _topo_order(loss)
    for node in order:
        if node.op not in SUPPORTED_OPS:
            raise UnsupportedOperationError(f"no gradient rule for operation {node.op!r}")
        if node.op == "leaf" and node.parents:
            raise UnsupportedOperationError("leaf nodes cannot have parents")
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or node.op == "leaf":
            if node.op == "leaf" and g is not None:
                grads[id(node)] = g
            continue
        for parent, pg in zip(node.parents, node._vjp(g)):
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    out = {}
    for name, p in params.items():
        g = grads.get(id(p))
        out[name] = np.zeros_like(p.value) if g is None else np.asarray(g, dtype=np.float64).reshape(p.shape)
    return out
