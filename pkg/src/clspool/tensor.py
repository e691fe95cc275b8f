"""Dense tensors with reverse-mode automatic differentiation.

Every operation records itself on an implicit tape (the graph of Tensor
nodes); ``backward(loss)`` walks the tape in reverse topological order,
accumulates gradients into every tensor created with ``requires_grad=True``,
and then clears the tape so a graph can only be differentiated once.

Layout is row-major everywhere. Shapes are checked explicitly; the only
broadcasts allowed are a bias vector added over the rows of a matrix
(``add``) and a per-row scalar multiplying a matrix (``scale_rows``).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an op's contract."""


class Tensor:
    """A dense float64 array that participates in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def backward(self):
        backward(self)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def backward(loss):
    """Accumulate gradients of a scalar loss into every requires_grad tensor.

    The tape rooted at ``loss`` is cleared afterwards; a second backward on
    the same graph raises.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("tape already consumed: one backward pass per forward pass")

    topo = []
    visited = set()
    stack = [(loss, False)]
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

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        node._consumed = True
    # Clear the tape: drop closures and parent links so memory is released
    # and a second backward cannot silently re-run.
    for node in topo:
        if node._parents:
            node._backward = None
            node._parents = ()


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    """Elementwise sum; also allows a 1-D bias broadcast over matrix rows."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        out = Tensor(a.data + b.data, _parents=(a, b))

        def bwd(g):
            _accumulate(a, g)
            _accumulate(b, g)

    elif a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        out = Tensor(a.data + b.data, _parents=(a, b))

        def bwd(g):
            _accumulate(a, g)
            _accumulate(b, g.sum(axis=0))

    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    out._backward = bwd
    return out


def neg(a):
    out = Tensor(-a.data, _parents=(a,))
    out._backward = lambda g: _accumulate(a, -g)
    return out


def mul(a, b):
    """Elementwise product of same-shape tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data * b.data, _parents=(a, b))

    def bwd(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    out._backward = bwd
    return out


def scale(a, c):
    """Multiply by a Python scalar constant."""
    c = float(c)
    out = Tensor(a.data * c, _parents=(a,))
    out._backward = lambda g: _accumulate(a, g * c)
    return out


def scale_rows(x, s):
    """Multiply each row of a matrix by a per-row scalar (n×1 or n-vector)."""
    col = s.data.reshape(-1, 1)
    if x.data.ndim != 2 or col.shape[0] != x.shape[0]:
        raise ShapeError(f"scale_rows: incompatible shapes {x.shape} and {s.shape}")
    out = Tensor(x.data * col, _parents=(x, s))

    def bwd(g):
        _accumulate(x, g * col)
        _accumulate(s, (g * x.data).sum(axis=1).reshape(s.shape))

    out._backward = bwd
    return out


# Below this many multiply-adds, matmul accumulates k-slices in order, which
# is bit-identical to a naive triple loop (BLAS reorders/fuses and is not).
_MATMUL_EXACT_LIMIT = 512


def _matmul_data(a, b):
    m, k = a.shape
    n = b.shape[1]
    if m * k * n > _MATMUL_EXACT_LIMIT:
        return a @ b
    out = np.zeros((m, n))
    for kk in range(k):
        out += a[:, kk:kk + 1] * b[kk, :]
    return out


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(_matmul_data(a.data, b.data), _parents=(a, b))

    def bwd(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    out._backward = bwd
    return out


def transpose(a):
    out = Tensor(a.data.T.copy(), _parents=(a,))
    out._backward = lambda g: _accumulate(a, g.T.copy())
    return out


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape).copy(), _parents=(a,))
    out._backward = lambda g: _accumulate(a, g.reshape(a.shape))
    return out


def tsum(a):
    """Sum of all entries, as a scalar tensor."""
    out = Tensor(a.data.sum(), _parents=(a,))
    out._backward = lambda g: _accumulate(a, np.full(a.shape, float(g)))
    return out


# ---------------------------------------------------------------------------
# indexing / assembly


def gather_rows(a, indices):
    """Select rows of a matrix; gradient scatter-adds back."""
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(a.data[idx], _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            _accumulate(a, buf)

    out._backward = bwd
    return out


def embedding(table, ids):
    """Row lookup into an embedding table with id range checking."""
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"embedding id out of range: ids span [{idx.min()}, {idx.max()}], "
            f"table has {table.shape[0]} rows"
        )
    return gather_rows(table, idx)


def slice_cols(a, start, stop):
    out = Tensor(a.data[:, start:stop].copy(), _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[:, start:stop] = g
            _accumulate(a, buf)

    out._backward = bwd
    return out


def concat_cols(parts):
    """Concatenate matrices with equal row counts along columns."""
    rows = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts differ ({[p.shape for p in parts]})")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1), _parents=tuple(parts))
    widths = [p.shape[1] for p in parts]

    def bwd(g):
        off = 0
        for p, w in zip(parts, widths):
            _accumulate(p, g[:, off:off + w].copy())
            off += w

    out._backward = bwd
    return out


def stack_rows(vectors):
    """Stack 1-D tensors of equal length into a matrix, one per row."""
    n = vectors[0].shape[0]
    for v in vectors:
        if v.data.ndim != 1 or v.shape[0] != n:
            raise ShapeError(f"stack_rows: lengths differ ({[v.shape for v in vectors]})")
    out = Tensor(np.stack([v.data for v in vectors]), _parents=tuple(vectors))

    def bwd(g):
        for i, v in enumerate(vectors):
            _accumulate(v, g[i].copy())

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(a):
    y = np.tanh(a.data)
    out = Tensor(y, _parents=(a,))
    out._backward = lambda g: _accumulate(a, g * (1.0 - y * y))
    return out


def sigmoid(a):
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y, _parents=(a,))
    out._backward = lambda g: _accumulate(a, g * y * (1.0 - y))
    return out


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a):
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = Tensor(x * cdf, _parents=(a,))

    def bwd(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        _accumulate(a, g * (cdf + x * pdf))

    out._backward = bwd
    return out


def softmax(a, axis=-1):
    """Numerically stable softmax along one axis (max subtraction)."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, _parents=(a,))

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(a, y * (g - dot))

    out._backward = bwd
    return out


def layer_norm(x, gamma, beta, eps=1e-12):
    """Per-row layer normalization of a matrix."""
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm expects a matrix, got shape {x.shape}")
    h = x.shape[1]
    if gamma.shape != (h,) or beta.shape != (h,):
        raise ShapeError(f"layer_norm: gamma/beta shape {gamma.shape}/{beta.shape} vs width {h}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data, _parents=(x, gamma, beta))

    def bwd(g):
        _accumulate(gamma, (g * xhat).sum(axis=0))
        _accumulate(beta, g.sum(axis=0))
        if x.requires_grad:
            gg = g * gamma.data
            m1 = gg.mean(axis=1, keepdims=True)
            m2 = (gg * xhat).mean(axis=1, keepdims=True)
            _accumulate(x, (gg - m1 - xhat * m2) * inv)

    out._backward = bwd
    return out


def dropout(x, p, rng, training=True):
    """Inverted dropout: scale by 1/(1-p) at train time, identity at eval."""
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode requires a generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    out = Tensor(x.data * keep, _parents=(x,))
    out._backward = lambda g: _accumulate(x, g * keep)
    return out


# ---------------------------------------------------------------------------
# losses


def cross_entropy(probs, labels):
    """Mean negative log-likelihood of integer labels under given rows.

    ``probs`` rows are expected to already be probability distributions;
    the log is clamped at 1e-12.
    """
    lab = np.asarray(labels, dtype=np.intp)
    if probs.data.ndim != 2 or lab.ndim != 1 or lab.shape[0] != probs.shape[0]:
        raise ShapeError(f"cross_entropy: probs {probs.shape} vs labels {lab.shape}")
    n, c = probs.shape
    if lab.size and (lab.min() < 0 or lab.max() >= c):
        raise IndexError(f"label out of range [0, {c}): saw {lab.min()}..{lab.max()}")
    picked = np.clip(probs.data[np.arange(n), lab], 1e-12, None)
    out = Tensor(-np.log(picked).sum() / n, _parents=(probs,))

    def bwd(g):
        if probs.requires_grad:
            buf = np.zeros_like(probs.data)
            unclamped = probs.data[np.arange(n), lab]
            live = unclamped >= 1e-12
            buf[np.arange(n), lab] = np.where(live, -1.0 / (n * picked), 0.0)
            _accumulate(probs, buf * float(g))

    out._backward = bwd
    return out
