"""Reverse-mode automatic differentiation over numpy arrays.

A `Tensor` wraps an ndarray plus an optional backward closure; applying ops
builds a tape that `backward()` replays in reverse topological order. The op
set is exactly what the model stack needs -- dense linear algebra, reductions
with subgradient max, softmax/log-softmax, a valid-padding 1-D convolution,
and embedding/gather with scatter-add backward. float32 is the training
default; float64 is used for gradient verification.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf as _erf

from ..errors import ShapeError

NEG_INF = -1e30  # additive mask value; exp() underflows to exactly 0 in f32/f64

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape construction."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- autograd ------------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(f"backward: root must be scalar, got shape {self.data.shape}")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def max(self, axis, keepdims=False):
        return tmax(self, axis=axis, keepdims=keepdims)


def astensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad and t._backward is None and not t._parents:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _needs_tape(parents) -> bool:
    return _GRAD_ENABLED and any(
        p.requires_grad or p._backward is not None or p._parents for p in parents
    )


def _make(data, parents, backward_builder):
    if _needs_tape(parents):
        return Tensor(data, requires_grad=True, parents=tuple(parents), backward=backward_builder())
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- arithmetic ---------------------------------------------------------------


def add(a, b):
    if isinstance(b, (int, float)) or isinstance(a, (int, float)):
        t, c = (a, b) if isinstance(a, Tensor) else (b, a)
        data = t.data + c

        def build():
            def back(g):
                _accum(t, g)
            return back

        return _make(data, (t,), build)
    a, b = astensor(a), astensor(b)
    data = a.data + b.data

    def build():
        def back(g):
            _accum(a, _unbroadcast(g, a.data.shape))
            _accum(b, _unbroadcast(g, b.data.shape))
        return back

    return _make(data, (a, b), build)


def sub(a, b):
    if isinstance(b, (int, float)):
        return add(a, -b)
    if isinstance(a, (int, float)):
        return add(mul(b, -1.0), a)
    a, b = astensor(a), astensor(b)
    data = a.data - b.data

    def build():
        def back(g):
            _accum(a, _unbroadcast(g, a.data.shape))
            _accum(b, _unbroadcast(-g, b.data.shape))
        return back

    return _make(data, (a, b), build)


def mul(a, b):
    if isinstance(b, (int, float)) or isinstance(a, (int, float)):
        t, c = (a, b) if isinstance(a, Tensor) else (b, a)
        data = t.data * c

        def build():
            def back(g):
                _accum(t, g * c)
            return back

        return _make(data, (t,), build)
    a, b = astensor(a), astensor(b)
    data = a.data * b.data

    def build():
        def back(g):
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
            _accum(b, _unbroadcast(g * a.data, b.data.shape))
        return back

    return _make(data, (a, b), build)


def div(a, b):
    if isinstance(b, (int, float)):
        return mul(a, 1.0 / b)
    a, b = astensor(a), astensor(b)
    data = a.data / b.data

    def build():
        def back(g):
            _accum(a, _unbroadcast(g / b.data, a.data.shape))
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
        return back

    return _make(data, (a, b), build)


def matmul(a, b):
    a, b = astensor(a), astensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: operands must be >= 2-D, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def build():
        def back(g):
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))
        return back

    return _make(data, (a, b), build)


def pow_scalar(a, p: float):
    a = astensor(a)
    data = a.data ** p

    def build():
        def back(g):
            _accum(a, g * p * a.data ** (p - 1.0))
        return back

    return _make(data, (a,), build)


def exp(a):
    a = astensor(a)
    data = np.exp(a.data)

    def build():
        def back(g):
            _accum(a, g * data)
        return back

    return _make(data, (a,), build)


def log(a):
    a = astensor(a)
    data = np.log(a.data)

    def build():
        def back(g):
            _accum(a, g / a.data)
        return back

    return _make(data, (a,), build)


def sqrt(a):
    a = astensor(a)
    data = np.sqrt(a.data)

    def build():
        def back(g):
            _accum(a, g * 0.5 / data)
        return back

    return _make(data, (a,), build)


def tanh(a):
    a = astensor(a)
    data = np.tanh(a.data)

    def build():
        def back(g):
            _accum(a, g * (1.0 - data * data))
        return back

    return _make(data, (a,), build)


def relu(a):
    a = astensor(a)
    data = np.maximum(a.data, 0)

    def build():
        mask = a.data > 0

        def back(g):
            _accum(a, g * mask)
        return back

    return _make(data, (a,), build)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a):
    a = astensor(a)
    cdf = 0.5 * (1.0 + _erf(a.data * _INV_SQRT2))
    data = a.data * cdf

    def build():
        def back(g):
            pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI
            _accum(a, g * (cdf + a.data * pdf))
        return back

    return _make(data, (a,), build)


# -- reductions ---------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = astensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def build():
        def back(g):
            gg = g
            if not keepdims and axis is not None:
                gg = np.expand_dims(gg, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape))
        return back

    return _make(data, (a,), build)


def tmean(a, axis=None, keepdims=False):
    a = astensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def tmax(a, axis: int, keepdims=False):
    """Max along one axis; gradient routes to the first argmax (ties broken low)."""
    a = astensor(a)
    data = a.data.max(axis=axis, keepdims=keepdims)

    def build():
        arg = np.expand_dims(a.data.argmax(axis=axis), axis)

        def back(g):
            gg = g if keepdims else np.expand_dims(g, axis)
            ga = np.zeros_like(a.data)
            np.put_along_axis(ga, arg, gg, axis)
            _accum(a, ga)
        return back

    return _make(data, (a,), build)


# -- shape manipulation ---------------------------------------------------------


def reshape(a, shape):
    a = astensor(a)
    data = a.data.reshape(shape)

    def build():
        def back(g):
            _accum(a, g.reshape(a.data.shape))
        return back

    return _make(data, (a,), build)


def transpose(a, axes):
    a = astensor(a)
    axes = tuple(axes)
    data = a.data.transpose(axes)

    def build():
        inv = tuple(np.argsort(axes))

        def back(g):
            _accum(a, g.transpose(inv))
        return back

    return _make(data, (a,), build)


def concat(tensors, axis=0):
    tensors = [astensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def build():
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def back(g):
            for t, gpart in zip(tensors, np.split(g, splits, axis=axis)):
                _accum(t, gpart)
        return back

    return _make(data, tuple(tensors), build)


def index(a, idx):
    a = astensor(a)
    data = a.data[idx]

    def build():
        advanced = isinstance(idx, np.ndarray) or (
            isinstance(idx, tuple) and any(isinstance(i, np.ndarray) for i in idx)
        )

        def back(g):
            ga = np.zeros_like(a.data)
            if advanced:
                np.add.at(ga, idx, g)
            else:
                ga[idx] += g
            _accum(a, ga)
        return back

    return _make(data, (a,), build)


# -- lookup / gather ------------------------------------------------------------


def embedding(weight, ids: np.ndarray):
    weight = astensor(weight)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.data.shape[0]):
        raise ShapeError(
            f"embedding: id out of range [0, {weight.data.shape[0]}), got "
            f"[{ids.min()}, {ids.max()}]"
        )
    data = weight.data[ids]

    def build():
        def back(g):
            gw = np.zeros_like(weight.data)
            np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.data.shape[1]))
            _accum(weight, gw)
        return back

    return _make(data, (weight,), build)


def gather_last(a, ids: np.ndarray):
    """Take entries along the last axis; ids shape = a.shape[:-1] + (K,)."""
    a = astensor(a)
    ids = np.asarray(ids)
    data = np.take_along_axis(a.data, ids, axis=-1)

    def build():
        def back(g):
            ga = np.zeros_like(a.data)
            d = a.data.shape[-1]
            flat_rows = np.arange(ga.size // d) * d
            flat_idx = flat_rows[:, None] + ids.reshape(-1, ids.shape[-1])
            np.add.at(ga.reshape(-1), flat_idx.reshape(-1), g.reshape(-1))
            _accum(a, ga)
        return back

    return _make(data, (a,), build)


# -- softmax family -------------------------------------------------------------


def softmax(a, axis=-1):
    a = astensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    data = ex / ex.sum(axis=axis, keepdims=True)

    def build():
        def back(g):
            dot = (g * data).sum(axis=axis, keepdims=True)
            _accum(a, (g - dot) * data)
        return back

    return _make(data, (a,), build)


def log_softmax(a, axis=-1):
    a = astensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def build():
        def back(g):
            _accum(a, g - np.exp(data) * g.sum(axis=axis, keepdims=True))
        return back

    return _make(data, (a,), build)


# -- convolution ------------------------------------------------------------------


def conv1d(x, w, b=None):
    """Valid 1-D convolution: x (S, L, Cin), w (K, Cin, Cout) -> (S, L-K+1, Cout)."""
    x, w = astensor(x), astensor(w)
    s, length, cin = x.data.shape
    k, cin_w, cout = w.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv1d: channel mismatch, input {cin} vs weight {cin_w}")
    if length < k:
        raise ShapeError(f"conv1d: input length {length} shorter than kernel {k}")
    lo = length - k + 1
    data = np.zeros((s, lo, cout), dtype=x.data.dtype)
    for j in range(k):
        data += x.data[:, j:j + lo, :] @ w.data[j]
    parents = [x, w]
    if b is not None:
        b = astensor(b)
        data = data + b.data
        parents.append(b)

    def build():
        def back(g):
            gx = np.zeros_like(x.data)
            gw = np.zeros_like(w.data)
            for j in range(k):
                gx[:, j:j + lo, :] += g @ w.data[j].T
                gw[j] = np.tensordot(x.data[:, j:j + lo, :], g, axes=([0, 1], [0, 1]))
            _accum(x, gx)
            _accum(w, gw)
            if b is not None:
                _accum(b, g.sum(axis=(0, 1)))
        return back

    return _make(data, tuple(parents), build)


# -- composite helpers -------------------------------------------------------------


def l2_normalize(a, axis=-1, eps=1e-12):
    """Rows scaled to unit L2 norm; zero rows map to zero."""
    sq = tsum(mul(a, a), axis=axis, keepdims=True)
    inv = pow_scalar(add(sq, eps), -0.5)
    return mul(a, inv)


def masked_mean(a, mask: np.ndarray, axis: int):
    """Mean over positions where mask==1; mask is a constant ndarray."""
    mask = np.asarray(mask, dtype=a.dtype)
    counts = mask.sum(axis=axis, keepdims=True)
    expanded = np.expand_dims(mask, -1) if mask.ndim == a.ndim - 1 else mask
    num = tsum(mul(a, Tensor(expanded)), axis=axis)
    denom = np.squeeze(counts, axis=axis)
    if denom.ndim < num.ndim:
        denom = denom[..., None]
    return mul(num, Tensor(1.0 / denom))
