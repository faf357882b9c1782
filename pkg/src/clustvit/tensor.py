"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation records a closure that knows how to push gradients back to
its inputs. ``backward`` walks the recorded graph in reverse topological
order, so repeated use of a tensor accumulates gradients additively.
Everything is float64 and single-threaded per tape; determinism follows
from numpy's deterministic kernels.
"""

from contextlib import contextmanager

import numpy as np

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_GELU_C = 0.044715


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_grad_enabled = True

# Optional observer for matmul sizes, set by the FLOPs profiler.
# Signature: hook(m, p, n) for an (m x p) @ (p x n) product.
_matmul_hook = None


def set_matmul_hook(fn):
    """Install a matmul observer; returns the previous hook."""
    global _matmul_hook
    old = _matmul_hook
    _matmul_hook = fn
    return old


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _grad_enabled
    old = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        wants = requires_grad or any(p.requires_grad for p in _parents)
        self.requires_grad = bool(wants and _grad_enabled)
        self.grad = None
        self._parents = tuple(_parents) if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    # -- arithmetic sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def backward(loss):
    """Populate ``grad`` on every tensor that contributed to a scalar loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    # Iterative DFS post-order so deep graphs do not hit the recursion limit.
    order = []
    seen = {id(loss)}
    stack = [(loss, iter(loss._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    loss._accum(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# -- core operations -----------------------------------------------------

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    if _matmul_hook is not None:
        m, p = a.data.shape
        _matmul_hook(m, p, b.data.shape[1])
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return Tensor(out_data, _parents=(a, b), _backward=bwd)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return Tensor(out_data, _parents=(a, b), _backward=bwd)


def mul(a, b):
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        scale = float(b)

        def bwd_scalar(g):
            if a.requires_grad:
                a._accum(g * scale)

        return Tensor(a.data * scale, _parents=(a,), _backward=bwd_scalar)

    b = _as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, _parents=(a, b), _backward=bwd)


def tsum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not x.requires_grad:
            return
        if axis is None:
            x._accum(np.broadcast_to(g, x.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            x._accum(np.broadcast_to(gg, x.data.shape).copy())

    return Tensor(out_data, _parents=(x,), _backward=bwd)


def transpose(x):
    x = _as_tensor(x)

    def bwd(g):
        if x.requires_grad:
            x._accum(g.T)

    return Tensor(x.data.T, _parents=(x,), _backward=bwd)


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0.0

    def bwd(g):
        if x.requires_grad:
            x._accum(g * mask)

    return Tensor(np.where(mask, x.data, 0.0), _parents=(x,), _backward=bwd)


def gelu(x):
    """GELU with the tanh approximation:

        0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))
    """
    x = _as_tensor(x)
    u = _SQRT_2_OVER_PI * (x.data + _GELU_C * x.data ** 3)
    t = np.tanh(u)
    out_data = 0.5 * x.data * (1.0 + t)

    def bwd(g):
        if x.requires_grad:
            du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x.data ** 2)
            deriv = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t ** 2) * du
            x._accum(g * deriv)

    return Tensor(out_data, _parents=(x,), _backward=bwd)


def softmax(x, axis=-1):
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            inner = (g * y).sum(axis=axis, keepdims=True)
            x._accum(y * (g - inner))

    return Tensor(y, _parents=(x,), _backward=bwd)


def layer_norm(x, gain, bias, eps=1e-6):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def bwd(g):
        if gain.requires_grad:
            gain._accum(_unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            bias._accum(_unbroadcast(g, bias.data.shape))
        if x.requires_grad:
            gxhat = g * gain.data
            m1 = gxhat.mean(axis=-1, keepdims=True)
            m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
            x._accum(inv * (gxhat - m1 - xhat * m2))

    return Tensor(out_data, _parents=(x, gain, bias), _backward=bwd)


def cross_entropy(logits, targets, ignore_label=None):
    """Mean negative log-softmax probability of the target class.

    Rows whose target equals ``ignore_label`` contribute nothing; raising
    "empty loss" if every row is ignored.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n, c = logits.data.shape
    if targets.shape != (n,):
        raise ShapeError(f"cross_entropy: {n} logit rows vs targets shape {targets.shape}")
    keep = np.ones(n, dtype=bool) if ignore_label is None else targets != ignore_label
    if not keep.any():
        raise ValueError("empty loss: every row carries the ignore label")
    ok = (~keep) | ((targets >= 0) & (targets < c))
    if not ok.all():
        raise ValueError(f"cross_entropy: target out of range at row {int(np.argmin(ok))}")
    m = int(keep.sum())
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)[keep]
    nll = lse[keep] - shifted[rows, targets[keep]]
    out_data = nll.sum() / m

    def bwd(g):
        if logits.requires_grad:
            p = np.exp(shifted - lse[:, None])
            p[rows, targets[keep]] -= 1.0
            p[~keep] = 0.0
            logits._accum(float(g) * p / m)

    return Tensor(out_data, _parents=(logits,), _backward=bwd)


def rows_mean(x):
    """Mean over rows as a 1 x D tensor. Each column is summed in sorted
    order, so the result is exactly invariant to row permutations."""
    x = _as_tensor(x)
    m = x.data.shape[0]
    if m == 0:
        raise ShapeError("rows_mean of an empty matrix")
    out_data = np.sort(x.data, axis=0).sum(axis=0, keepdims=True) / m

    def bwd(g):
        if x.requires_grad:
            x._accum(np.broadcast_to(g / m, x.data.shape).copy())

    return Tensor(out_data, _parents=(x,), _backward=bwd)


def gather_rows(x, indices):
    """Select rows by index; backward scatter-adds into the source."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)

    def bwd(g):
        if x.requires_grad:
            buf = np.zeros_like(x.data)
            np.add.at(buf, idx, g)
            x._accum(buf)

    return Tensor(x.data[idx], _parents=(x,), _backward=bwd)


def concat_rows(tensors):
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=0)
    splits = np.cumsum([t.data.shape[0] for t in tensors])[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=0)):
            if t.requires_grad:
                t._accum(piece)

    return Tensor(out_data, _parents=tuple(tensors), _backward=bwd)


def concat_cols(tensors):
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum([t.data.shape[1] for t in tensors])[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=1)):
            if t.requires_grad:
                t._accum(piece)

    return Tensor(out_data, _parents=tuple(tensors), _backward=bwd)


def slice_cols(x, start, stop):
    x = _as_tensor(x)

    def bwd(g):
        if x.requires_grad:
            buf = np.zeros_like(x.data)
            buf[:, start:stop] = g
            x._accum(buf)

    return Tensor(x.data[:, start:stop].copy(), _parents=(x,), _backward=bwd)


def linear_map(matrix, x):
    """Apply a constant linear map ``matrix @ x``.

    Used for fixed interpolation stencils; deliberately bypasses the matmul
    hook so fixed resampling never enters FLOPs accounting.
    """
    x = _as_tensor(x)
    matrix = np.asarray(matrix, dtype=np.float64)

    def bwd(g):
        if x.requires_grad:
            x._accum(matrix.T @ g)

    return Tensor(matrix @ x.data, _parents=(x,), _backward=bwd)
