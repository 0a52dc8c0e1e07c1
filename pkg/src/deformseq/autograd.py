"""Small define-by-run reverse-mode autodiff kernel on float64 numpy arrays.

Values are dense arrays; matrix ops act on the last two axes so a leading
batch axis (paths) and a head axis ride along.  Broadcasting follows numpy
and is undone in the backward pass by summing over the broadcast axes.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (inference)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@dataclass
class RngStream:
    """Named, seeded generator; equal seeds give equal draws."""

    seed: int
    algorithm: str = "PCG64"
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.algorithm != "PCG64":
            raise InvalidInputError(f"unsupported generator {self.algorithm!r}")
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, key: int) -> "RngStream":
        """Independent stream derived from (seed, key)."""
        ss = np.random.SeedSequence([int(self.seed), int(key)])
        return RngStream(int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)))

    def random(self, shape):
        return self._gen.random(shape)

    def uniform(self, low, high, shape=None):
        return self._gen.uniform(low, high, shape)

    def permutation(self, n):
        return self._gen.permutation(n)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """A node in the computation graph: value, adjoint and producer."""

    __slots__ = ("data", "_grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self._grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    def zero_grad(self):
        self._grad = None

    def item(self) -> float:
        return float(self.data.reshape(()))

    def _accumulate(self, g):
        if self._grad is None:
            self._grad = np.array(g, dtype=np.float64, copy=True).reshape(self.data.shape)
        else:
            self._grad += g

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __pow__(self, p): return power(self, p)
    def __getitem__(self, idx): return slice_(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _broadcast_check(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(a.data / b.data, (a, b), bw)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        a._accumulate(g * p * a.data ** (p - 1))

    return _node(a.data ** p, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)

    def bw(g):
        a._accumulate(g * y)

    return _node(y, (a,), bw)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # split by sign so exp never overflows
    x = a.data
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bw(g):
        a._accumulate(g * y * (1.0 - y))

    return _node(y, (a,), bw)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def bw(g):
        a._accumulate(g * (1.0 - y * y))

    return _node(y, (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g):
        a._accumulate(g * mask)

    return _node(np.where(mask, a.data, 0.0), (a,), bw)


# ---------------------------------------------------------------------------
# structural


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(a.data @ b.data, (a, b), bw)


def transpose(a, axes=None) -> Tensor:
    """Swap the last two axes, or permute by ``axes``."""
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise ShapeError(f"transpose needs at least 2 axes, got {a.shape}")
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        a._accumulate(np.transpose(g, inverse))

    return _node(np.transpose(a.data, axes), (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from None

    def bw(g):
        a._accumulate(g.reshape(a.shape))

    return _node(y, (a,), bw)


def slice_(a, idx) -> Tensor:
    """Basic (non-fancy) indexing."""
    a = as_tensor(a)
    y = a.data[idx]

    def bw(g):
        # write into one shared buffer; per-step slices of a long sequence
        # would otherwise allocate a full-size array each
        if a._grad is None:
            a._grad = np.zeros_like(a.data)
        a._grad[idx] += g

    return _node(y, (a,), bw)


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in ts]} on axis {axis}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        for t, piece in zip(ts, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _node(y, tuple(ts), bw)


def stack(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        y = np.stack([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"cannot stack shapes {[t.shape for t in ts]}") from None

    def bw(g):
        for i, t in enumerate(ts):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return _node(y, tuple(ts), bw)


def pad(a, axis: int, before: int, after: int) -> Tensor:
    """Zero-pad ``a`` along ``axis``."""
    a = as_tensor(a)
    axis = axis % a.ndim
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    y = np.pad(a.data, widths)
    n = a.shape[axis]
    idx = (slice(None),) * axis + (slice(before, before + n),)

    def bw(g):
        a._accumulate(g[idx])

    return _node(y, (a,), bw)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _node(y, (a,), bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / n)


# ---------------------------------------------------------------------------
# neural-network blocks


def softmax(a, axis: int = -1) -> Tensor:
    """Row softmax; ``-inf`` logits get exactly zero weight."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        a._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _node(y, (a,), bw)


def layer_norm(a, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalise to zero mean / unit population variance along ``axis``.

    No gain or bias here; models add their own affine parameters.
    """
    a = as_tensor(a)
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        a._accumulate(inv * (g - gm - xhat * gx))

    return _node(xhat, (a,), bw)


def dropout(a, rate: float, rng: RngStream | None = None, training: bool = False) -> Tensor:
    """Inverted dropout: kept activations are scaled by ``1/(1-rate)``."""
    a = as_tensor(a)
    if not training or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise InvalidInputError(f"dropout rate must lie in [0, 1), got {rate}")
    if rng is None:
        raise InvalidInputError("dropout in training mode needs an RngStream")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def bw(g):
        a._accumulate(g * mask)

    return _node(a.data * mask, (a,), bw)


# ---------------------------------------------------------------------------
# reverse pass


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into every reachable ``requires_grad`` node."""
    if loss.data.size != 1:
        raise InvalidInputError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node._grad is not None:
            node._backward(node._grad)


def gradient_check(function, inputs, h: float = 1e-6) -> float:
    """Max relative gap between backward gradients and central differences.

    ``function`` maps a list of Tensors to a scalar Tensor.  ``inputs`` are
    arrays; they are not modified.  The per-coordinate error is
    ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``.
    """
    base = [np.array(x, dtype=np.float64, copy=True) for x in inputs]
    leaves = [Tensor(x.copy(), requires_grad=True) for x in base]
    out = function(leaves)
    backward(out)
    worst = 0.0
    for k, x in enumerate(base):
        g_ad = leaves[k].grad
        for idx in np.ndindex(x.shape):
            probe = [b.copy() for b in base]
            probe[k][idx] = x[idx] + h
            with no_grad():
                f_plus = function([Tensor(p) for p in probe]).item()
            probe[k][idx] = x[idx] - h
            with no_grad():
                f_minus = function([Tensor(p) for p in probe]).item()
            g_fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(g_ad[idx] - g_fd) / max(1e-8, abs(g_ad[idx]) + abs(g_fd))
            worst = max(worst, err)
    return worst
