"""Minimal deterministic tensor core with reverse-mode differentiation.

Every numeric value in the model is a Tensor wrapping a row-major numpy
array.  Operations record their inputs and a backward closure; `backward`
walks the graph once in reverse topological order and accumulates gradients
on every tensor with ``requires_grad``.  Storage is float32 by default;
float64 is available as a shadow mode for gradient audits (pass ``dtype``
when creating parameters).

Additive attention masks use the sentinel ``NEG_INF`` (-1e9) instead of a
true -inf so that softmax backward never multiplies inf by zero.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .errors import NumericError, ShapeError, UsageError

NEG_INF = -1.0e9

_FINITE_CHECKS = False


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-op non-finite output checks (off by default; cheap tests on)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def _check(out: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite value produced by op '{op}'")


class Tensor:
    """N-dimensional float array with an optional gradient slot.

    ``_parents`` and ``_backward`` link the tensor into the recorded
    computation graph; leaves have neither.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32, op: str = "leaf"):
        arr = np.asarray(data, dtype=dtype)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars fold into the op without creating a node.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _result(data, parents, backward_fn, op: str) -> Tensor:
    """Build an op output, recording the graph only when a parent needs grads."""
    _check(data, op)
    requires = any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = requires
    out.op = op
    if requires:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting introduced or expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if squeeze:
        g = g.sum(axis=squeeze, keepdims=True)
    return g


class Graph:
    """Reverse-topological tape rooted at one output tensor.

    Built by iterative depth-first traversal; each node appears exactly once
    and always after all of its parents.
    """

    def __init__(self, root: Tensor):
        self.root = root
        nodes: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                nodes.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.nodes = nodes


def backward(loss: Tensor, graph: Graph | None = None) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``."""
    if loss.data.ndim != 0:
        raise UsageError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if graph is None:
        graph = Graph(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# Op catalog
# ---------------------------------------------------------------------------


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        data = a.data + b
        return _result(data, (a,), lambda g: _accum(a, g), "add")
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _result(data, (a, b), bwd, "add")


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        data = a.data - b
        return _result(data, (a,), lambda g: _accum(a, g), "sub")
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _result(data, (a, b), bwd, "sub")


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        data = a.data * b
        return _result(data, (a,), lambda g: _accum(a, g * b), "mul")
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), bwd, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy semantics: 1-D operands are promoted, and
    leading batch axes broadcast."""
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0:
        raise ShapeError("matmul: operands must be at least 1-D")
    try:
        data = np.matmul(ad, bd)
    except ValueError:
        raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape} do not conform") from None

    a2 = ad[None, :] if ad.ndim == 1 else ad
    b2 = bd[:, None] if bd.ndim == 1 else bd

    def bwd(g):
        g2 = g
        if ad.ndim == 1:
            g2 = np.expand_dims(g2, axis=-2 if bd.ndim > 1 else 0)
        if bd.ndim == 1:
            g2 = np.expand_dims(g2, axis=-1)
        ga = _unbroadcast(np.matmul(g2, np.swapaxes(b2, -1, -2)), a2.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a2, -1, -2), g2), b2.shape)
        _accum(a, ga.reshape(ad.shape))
        _accum(b, gb.reshape(bd.shape))

    return _result(data, (a, b), bwd, "matmul")


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather slices along ``axis`` (0 or 1) by integer index; duplicate
    indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    if axis not in (0, 1):
        raise UsageError(f"take: axis must be 0 or 1, got {axis}")
    if axis >= x.data.ndim:
        raise ShapeError(f"take: axis {axis} out of range for shape {x.data.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[axis]):
        raise ShapeError(f"take: index out of range for axis {axis} of shape {x.data.shape}")
    data = np.take(x.data, idx, axis=axis)

    def bwd(g):
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        if axis == 0:
            np.add.at(x.grad, idx, g)
        else:
            np.add.at(x.grad, (slice(None), idx), g)

    return _result(data, (x,), bwd, "take")


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup into an embedding table (gather on axis 0)."""
    return take(table, ids, axis=0)


def pick(x: Tensor, indices) -> Tensor:
    """Select one column per row of a 2-D tensor: out[i] = x[i, idx[i]]."""
    idx = np.asarray(indices, dtype=np.int64)
    if x.data.ndim != 2:
        raise ShapeError(f"pick: expected 2-D input, got shape {x.data.shape}")
    if idx.ndim != 1 or idx.shape[0] != x.data.shape[0]:
        raise ShapeError(f"pick: index shape {idx.shape} does not match {x.data.shape[0]} rows")
    rows = np.arange(x.data.shape[0])
    data = x.data[rows, idx]

    def bwd(g):
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, (rows, idx), g)

    return _result(data, (x,), bwd, "pick")


def softmax(x: Tensor, mask=None) -> Tensor:
    """Softmax along the last axis, with an optional additive mask whose
    entries are 0 (visible) or NEG_INF (masked)."""
    z = x.data if mask is None else x.data + np.asarray(mask, dtype=x.data.dtype)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        _accum(x, data * (g - inner))

    return _result(data, (x,), bwd, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    data = z - lse

    def bwd(g):
        _accum(x, g - np.exp(data) * g.sum(axis=-1, keepdims=True))

    return _result(data, (x,), bwd, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape {(d,)}, got {gain.data.shape}/{bias.data.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gain.data + bias.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=lead))
        _accum(bias, g.sum(axis=lead))
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accum(x, (dxhat - m1 - xhat * m2) * inv)

    return _result(data, (x, gain, bias), bwd, "layer_norm")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    data = (x.data * cdf).astype(x.data.dtype)

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        _accum(x, g * (cdf + x.data * pdf))

    return _result(data, (x,), bwd, "gelu")


def amax(x: Tensor, axis: int) -> Tensor:
    """Max-reduce over ``axis``; gradient flows to the first (lowest-index)
    maximum of each reduced slice."""
    data = x.data.max(axis=axis)
    idx = np.argmax(x.data, axis=axis)

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        _accum(x, gx)

    return _result(data, (x,), bwd, "amax")


def reduce_sum(x: Tensor, axis=None) -> Tensor:
    data = x.data.sum(axis=axis)

    def bwd(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.data.shape).copy())
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy())

    return _result(data, (x,), bwd, "sum")


def reduce_mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.data.shape[axis]
    data = x.data.mean(axis=axis)

    def bwd(g):
        if axis is None:
            _accum(x, np.broadcast_to(g / n, x.data.shape).copy())
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g, axis) / n, x.data.shape).copy())

    return _result(data, (x,), bwd, "mean")


def reshape(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)

    def bwd(g):
        _accum(x, g.reshape(x.data.shape))

    return _result(data, (x,), bwd, "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = np.transpose(x.data, axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accum(x, np.transpose(g, inv))

    return _result(data, (x,), bwd, "transpose")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise UsageError("concat: need at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, stop)
            _accum(t, g[tuple(sl)])

    return _result(data, tuple(tensors), bwd, "concat")


def cross_entropy(logits: Tensor, labels, reduction: str = "mean") -> Tensor:
    """Cross-entropy of integer labels against rows of ``logits`` (N, C)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: expected 2-D logits, got shape {logits.data.shape}")
    if labels.shape != (logits.data.shape[0],):
        raise ShapeError(
            f"cross_entropy: labels shape {labels.shape} does not match {logits.data.shape[0]} rows"
        )
    nll = -pick(log_softmax(logits), labels)
    if reduction == "mean":
        return reduce_mean(nll)
    if reduction == "sum":
        return reduce_sum(nll)
    if reduction == "none":
        return nll
    raise UsageError(f"cross_entropy: unknown reduction {reduction!r}")
