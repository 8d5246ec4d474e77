"""Reverse-mode differentiation over a closed set of matrix operations.

Each op returns a :class:`Node` holding its forward value and a closure that
maps the upstream gradient to gradients for its parents. Only the ops the
graph models need exist here; there is no general tensor framework.

Segment ops work on rows that are grouped contiguously, described by an
``indptr`` array in CSR style (segment ``s`` owns rows
``indptr[s]:indptr[s+1]``, every segment non-empty).
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp

from supergnn.errors import NonFinite, ShapeMismatch

Backward = Callable[[np.ndarray], tuple]


class Node:
    """A value in the recorded computation graph."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "requires_grad", "name")

    def __init__(self, value, parents: tuple = (), backward_fn: Backward | None = None,
                 op: str = "leaf", requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def parameter(value, name: str | None = None) -> Node:
    return Node(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def constant(value) -> Node:
    return Node(value)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _make(value, parents: tuple, backward_fn: Backward, op: str) -> Node:
    if any(p.requires_grad for p in parents):
        return Node(value, parents, backward_fn, op, requires_grad=True)
    return Node(value, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _topological(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> dict[Node, np.ndarray]:
    """Accumulate d(loss)/d(node) for every node; return leaf gradients.

    Raises:
        ShapeMismatch: ``loss`` is not a single scalar.
        NonFinite: any resulting leaf gradient has NaN/Inf.
    """
    if loss.value.size != 1:
        raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.value.shape}")
    order = _topological(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    leaves = {}
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        if node.backward_fn is None:
            leaves[node] = g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            parent.grad = pg if parent.grad is None else parent.grad + pg
    for leaf, g in leaves.items():
        if not np.isfinite(g).all():
            raise NonFinite(f"non-finite gradient for {leaf.name or leaf.op}")
    return leaves


# ---------------------------------------------------------------- linear ops

def matmul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    if a.value.shape[-1] != b.value.shape[0]:
        raise ShapeMismatch(f"matmul {a.value.shape} @ {b.value.shape}")
    av, bv = a.value, b.value

    def bw(g):
        return g @ bv.T, av.T @ g

    return _make(av @ bv, (a, b), bw, "matmul")


def add(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    sa, sb = a.value.shape, b.value.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.value + b.value, (a, b), bw, "add")


def mul(a, b) -> Node:
    """Elementwise product with numpy broadcasting."""
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value

    def bw(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _make(av * bv, (a, b), bw, "mul")


def scale(a, c: float) -> Node:
    a = _lift(a)
    c = float(c)
    return _make(a.value * c, (a,), lambda g: (g * c,), "scale")


def total(a) -> Node:
    a = _lift(a)
    shape = a.value.shape
    return _make(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g.item()),), "sum")


def spmm(matrix: sp.spmatrix, a) -> Node:
    """Product of a constant sparse matrix with a node."""
    a = _lift(a)
    return _make(np.asarray(matrix @ a.value), (a,), lambda g: (np.asarray(matrix.T @ g),), "spmm")


def gather_rows(a, index: np.ndarray, scatter: sp.spmatrix | None = None) -> Node:
    """Rows ``a[index]``; ``scatter`` may supply the (n x len(index)) 0/1 matrix
    used for the backward scatter-add when the same index is reused often."""
    a = _lift(a)
    n = a.value.shape[0]
    index = np.asarray(index)

    def bw(g):
        if scatter is not None:
            return (np.asarray(scatter @ g),)
        return (scatter_add(g, index, n),)

    return _make(np.take(a.value, index, axis=0), (a,), bw, "gather")


def scatter_matrix(index: np.ndarray, n: int) -> sp.csr_matrix:
    index = np.asarray(index)
    return sp.csr_matrix((np.ones(index.size), (index, np.arange(index.size))),
                         shape=(n, index.size))


def scatter_add(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    """Sum rows of ``values`` into ``n`` buckets; deterministic order."""
    out = np.empty((n, values.shape[1]))
    for c in range(values.shape[1]):
        out[:, c] = np.bincount(index, weights=values[:, c], minlength=n)
    return out


def segment_sum(a, indptr: np.ndarray) -> Node:
    a = _lift(a)
    counts = np.diff(indptr)

    def bw(g):
        return (np.repeat(g, counts, axis=0),)

    return _make(np.add.reduceat(a.value, indptr[:-1], axis=0), (a,), bw, "segment_sum")


def edge_aggregate(weights, x, src: np.ndarray, dst_ptr: np.ndarray,
                   dst: np.ndarray) -> Node:
    """``out[i] = sum_e weights[e] * x[src[e]]`` over edges ``e`` with ``dst[e] == i``.

    Edges must be sorted by destination (``dst_ptr`` is the CSR row pointer).
    """
    weights, x = _lift(weights), _lift(x)
    w = weights.value.ravel()
    n = len(dst_ptr) - 1
    op = sp.csr_matrix((w, src, dst_ptr), shape=(n, x.value.shape[0]))
    xv = x.value

    def bw(g):
        gw = np.einsum("ij,ij->i", np.take(g, dst, axis=0), np.take(xv, src, axis=0))
        return gw.reshape(weights.value.shape), np.asarray(op.T @ g)

    return _make(np.asarray(op @ xv), (weights, x), bw, "edge_aggregate")


# ----------------------------------------------------------- nonlinearities

def relu(a) -> Node:
    a = _lift(a)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope: float = 0.01) -> Node:
    a = _lift(a)
    factor = np.where(a.value > 0, 1.0, slope)
    return _make(a.value * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Node:
    a = _lift(a)
    s = _sigmoid(a.value)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def activation(a, kind: str, slope: float = 0.01) -> Node:
    if kind == "relu":
        return relu(a)
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    if kind == "identity":
        return _lift(a)
    raise ValueError(f"unknown activation {kind!r}")


# ------------------------------------------------------------- segment ops

def segment_softmax(scores, indptr: np.ndarray) -> Node:
    """Softmax of an (E x 1) score column within each segment."""
    scores = _lift(scores)
    counts = np.diff(indptr)
    starts = indptr[:-1]
    z = scores.value
    zmax = np.maximum.reduceat(z, starts, axis=0)
    e = np.exp(z - np.repeat(zmax, counts, axis=0))
    denom = np.add.reduceat(e, starts, axis=0)
    alpha = e / np.repeat(denom, counts, axis=0)

    def bw(g):
        inner = np.add.reduceat(alpha * g, starts, axis=0)
        return (alpha * (g - np.repeat(inner, counts, axis=0)),)

    return _make(alpha, (scores,), bw, "segment_softmax")


def segment_max(a, indptr: np.ndarray) -> Node:
    """Column-wise max per segment; the subgradient goes to the first maximiser."""
    a = _lift(a)
    x = a.value
    counts = np.diff(indptr)
    starts = indptr[:-1]
    out = np.maximum.reduceat(x, starts, axis=0)
    hit = x == np.repeat(out, counts, axis=0)
    rows = np.arange(x.shape[0])[:, None]
    pos = np.where(hit, rows, x.shape[0])
    first = np.minimum.reduceat(pos, starts, axis=0)
    cols = np.broadcast_to(np.arange(x.shape[1]), first.shape)

    def bw(g):
        gx = np.zeros_like(x)
        gx[first, cols] = g
        return (gx,)

    return _make(out, (a,), bw, "segment_max")


def signed_power(a, p: float, eps: float) -> Node:
    """Elementwise sgn(x) * (|x| + eps)^p."""
    a = _lift(a)
    x = a.value
    mag = np.abs(x) + eps
    out = np.sign(x) * mag ** p
    deriv = np.where(x != 0, p * mag ** (p - 1.0), 0.0)
    return _make(out, (a,), lambda g: (g * deriv,), "signed_power")


def signed_root(a, p: float, eps: float) -> Node:
    """Elementwise sgn(s) * (|s| + eps)^(1/p)."""
    a = _lift(a)
    s = a.value
    mag = np.abs(s) + eps
    inv = 1.0 / p
    out = np.sign(s) * mag ** inv
    deriv = np.where(s != 0, inv * mag ** (inv - 1.0), 0.0)
    return _make(out, (a,), lambda g: (g * deriv,), "signed_root")


# -------------------------------------------------------------------- loss

def bce_with_logits(logits, targets) -> Node:
    """Mean binary cross-entropy computed in logit space."""
    logits = _lift(logits)
    z = logits.value
    y = np.asarray(targets, dtype=np.float64).reshape(z.shape)
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    grad = (_sigmoid(z) - y) / n
    return _make(np.array([[loss.mean()]]), (logits,), lambda g: (g.item() * grad,), "bce")


def leaves(nodes: Iterable[Node]) -> list[Node]:
    return [n for n in nodes if n.backward_fn is None and n.requires_grad]
