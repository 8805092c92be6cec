"""Neural layers on top of the tensor tape.

Conventions: activations are (batch, time, channels); boolean/0-1 validity
masks are (batch, time) constants; attention masks are additive with
NEG_INF at disallowed positions so masked keys get exactly zero probability.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from . import tensor as T
from .tensor import NEG_INF, Tensor


class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(np.asarray(data), requires_grad=True)


class RngBox:
    """Shared mutable RNG handle so dropout draws follow one seeded stream."""

    def __init__(self, seed: int = 0):
        self.gen = np.random.default_rng(seed)

    def reseed(self, seed: int):
        self.gen = np.random.default_rng(seed)

    def set_state(self, state: dict):
        self.gen.bit_generator.state = state

    def get_state(self) -> dict:
        return self.gen.bit_generator.state


class Module:
    """Minimal container: tracks Parameters, sub-Modules, and buffers."""

    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def set_buffer(self, name: str, value: np.ndarray):
        if name not in self._buffers:
            raise ShapeError(f"unknown buffer {name}")
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def _children(self):
        for name, value in vars(self).items():
            if name.startswith("_") or name == "training":
                continue
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(prefix=full + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, value in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{name}", value
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix=f"{prefix}{name}.")

    def load_buffer_state(self, state: dict, prefix: str = ""):
        for name in list(getattr(self, "_buffers", {})):
            key = f"{prefix}{name}"
            if key in state:
                self.set_buffer(name, state[key].copy())
        for name, value in self._children():
            if isinstance(value, Module):
                value.load_buffer_state(state, prefix=f"{prefix}{name}.")

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self._children():
            if isinstance(child, Module):
                child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def glorot_uniform(shape, rng, dtype):
    fan_in = int(np.prod(shape[:-1]))
    fan_out = int(shape[-1])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng, dtype=np.float32, bias=True):
        super().__init__()
        self.w = Parameter(glorot_uniform((in_features, out_features), rng, dtype))
        self.b = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.w)
        return T.add(y, self.b) if self.b is not None else y


class Embedding(Module):
    def __init__(self, num_embeddings: int, dim: int, rng, dtype=np.float32):
        super().__init__()
        self.w = Parameter((0.02 * rng.standard_normal((num_embeddings, dim))).astype(dtype))

    def __call__(self, ids: np.ndarray):
        return T.embedding(self.w, ids)


class Conv1d(Module):
    """Valid-padding temporal convolution, (S, L, Cin) -> (S, L-K+1, Cout)."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng,
                 dtype=np.float32):
        super().__init__()
        self.kernel_size = kernel_size
        self.w = Parameter(glorot_uniform((kernel_size, in_channels, out_channels), rng, dtype))
        self.b = Parameter(np.zeros(out_channels, dtype=dtype))

    def __call__(self, x):
        return T.conv1d(x, self.w, self.b)


class BatchNorm1d(Module):
    """Per-channel batch norm over (batch, time) with a validity mask.

    Batch statistics are computed over valid time steps only, so padding
    cannot shift them; inference uses frozen running statistics.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def __call__(self, x, valid_mask: np.ndarray | None = None):
        if self.training:
            if valid_mask is None:
                valid_mask = np.ones(x.shape[:2], dtype=x.dtype)
            m = np.asarray(valid_mask, dtype=x.dtype)[..., None]
            count = float(m.sum())
            xm = T.mul(x, Tensor(m))
            mean = T.mul(T.tsum(xm, axis=(0, 1)), 1.0 / count)
            centered = T.sub(x, mean)
            var = T.mul(T.tsum(T.mul(T.mul(centered, centered), Tensor(m)), axis=(0, 1)),
                        1.0 / count)
            self.set_buffer("running_mean", ((1 - self.momentum) * self.running_mean
                                             + self.momentum * mean.data).astype(x.dtype))
            self.set_buffer("running_var", ((1 - self.momentum) * self.running_var
                                            + self.momentum * var.data).astype(x.dtype))
        else:
            mean = Tensor(self.running_mean)
            var = Tensor(self.running_var)
            centered = T.sub(x, mean)
        inv_std = T.pow_scalar(T.add(var, self.eps), -0.5)
        return T.add(T.mul(T.mul(centered, inv_std), self.gamma), self.beta)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))

    def __call__(self, x):
        mean = T.tmean(x, axis=-1, keepdims=True)
        centered = T.sub(x, mean)
        var = T.tmean(T.mul(centered, centered), axis=-1, keepdims=True)
        inv_std = T.pow_scalar(T.add(var, self.eps), -0.5)
        return T.add(T.mul(T.mul(centered, inv_std), self.gamma), self.beta)


class Dropout(Module):
    """Inverted dropout: scales kept units by 1/(1-p) at train time."""

    def __init__(self, p: float, rngbox: RngBox):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ShapeError(f"dropout p must lie in [0, 1), got {p}")
        self.p = p
        self.rngbox = rngbox

    def __call__(self, x):
        if not self.training or self.p == 0.0:
            return x
        keep = (self.rngbox.gen.random(x.shape) >= self.p).astype(x.dtype)
        return T.mul(x, Tensor(keep / (1.0 - self.p)))


def sinusoidal_positions(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / dim)
    enc = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return enc.astype(dtype)


def add_positional_encoding(x):
    _, length, dim = x.shape
    return T.add(x, Tensor(sinusoidal_positions(length, dim, x.dtype)[None]))


def key_padding_bias(mask: np.ndarray, dtype) -> np.ndarray:
    """(B, Lk) validity mask -> (B, 1, 1, Lk) additive attention bias."""
    m = np.asarray(mask, dtype=dtype)
    return ((1.0 - m) * NEG_INF)[:, None, None, :]


def causal_bias(length: int, dtype) -> np.ndarray:
    bias = np.triu(np.full((length, length), NEG_INF, dtype=dtype), k=1)
    return bias[None, None]


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng, dtype=np.float32):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"attention dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng, dtype)
        self.wk = Linear(dim, dim, rng, dtype)
        self.wv = Linear(dim, dim, rng, dtype)
        self.wo = Linear(dim, dim, rng, dtype)

    def _split(self, x, b, length):
        x = T.reshape(x, (b, length, self.heads, self.head_dim))
        return T.transpose(x, (0, 2, 1, 3))

    def __call__(self, query, key, value, attn_bias: np.ndarray | None = None):
        b, lq, dim = query.shape
        bk, lk = key.shape[0], key.shape[1]
        q = self._split(self.wq(query), b, lq)
        k = self._split(self.wk(key), bk, lk)
        v = self._split(self.wv(value), bk, lk)
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))),
                       1.0 / np.sqrt(self.head_dim))
        if attn_bias is not None:
            scores = T.add(scores, Tensor(attn_bias))
        attn = T.softmax(scores, axis=-1)
        out = T.matmul(attn, v)
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (b, lq, dim))
        return self.wo(out)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, dropout: Dropout, rng, dtype=np.float32):
        super().__init__()
        self.lin1 = Linear(dim, hidden, rng, dtype)
        self.lin2 = Linear(hidden, dim, rng, dtype)
        self.drop = dropout

    def __call__(self, x):
        return self.lin2(self.drop(T.gelu(self.lin1(x))))


class TransformerEncoderLayer(Module):
    """Pre-norm self-attention block."""

    def __init__(self, dim: int, heads: int, ff_hidden: int, dropout_p: float,
                 rngbox: RngBox, rng, dtype=np.float32):
        super().__init__()
        self.ln1 = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype)
        self.ln2 = LayerNorm(dim, dtype=dtype)
        self.drop = Dropout(dropout_p, rngbox)
        self.ffn = FeedForward(dim, ff_hidden, Dropout(dropout_p, rngbox), rng, dtype)

    def __call__(self, x, attn_bias=None):
        h = self.ln1(x)
        x = T.add(x, self.drop(self.attn(h, h, h, attn_bias)))
        x = T.add(x, self.drop(self.ffn(self.ln2(x))))
        return x


class TransformerEncoder(Module):
    def __init__(self, num_layers: int, dim: int, heads: int, ff_hidden: int,
                 dropout_p: float, rngbox: RngBox, rng, dtype=np.float32):
        super().__init__()
        self.layers = [
            TransformerEncoderLayer(dim, heads, ff_hidden, dropout_p, rngbox, rng, dtype)
            for _ in range(num_layers)
        ]
        self.ln_out = LayerNorm(dim, dtype=dtype)

    def __call__(self, x, key_mask: np.ndarray | None = None):
        bias = key_padding_bias(key_mask, x.dtype) if key_mask is not None else None
        for layer in self.layers:
            x = layer(x, bias)
        return self.ln_out(x)


class TransformerDecoderLayer(Module):
    """Pre-norm causal self-attention + cross-attention block."""

    def __init__(self, dim: int, heads: int, ff_hidden: int, dropout_p: float,
                 rngbox: RngBox, rng, dtype=np.float32):
        super().__init__()
        self.ln1 = LayerNorm(dim, dtype=dtype)
        self.self_attn = MultiHeadAttention(dim, heads, rng, dtype)
        self.ln2 = LayerNorm(dim, dtype=dtype)
        self.cross_attn = MultiHeadAttention(dim, heads, rng, dtype)
        self.ln3 = LayerNorm(dim, dtype=dtype)
        self.drop = Dropout(dropout_p, rngbox)
        self.ffn = FeedForward(dim, ff_hidden, Dropout(dropout_p, rngbox), rng, dtype)

    def __call__(self, x, memory, self_bias, cross_bias):
        h = self.ln1(x)
        x = T.add(x, self.drop(self.self_attn(h, h, h, self_bias)))
        h = self.ln2(x)
        x = T.add(x, self.drop(self.cross_attn(h, memory, memory, cross_bias)))
        x = T.add(x, self.drop(self.ffn(self.ln3(x))))
        return x


class TransformerDecoder(Module):
    def __init__(self, num_layers: int, dim: int, heads: int, ff_hidden: int,
                 dropout_p: float, rngbox: RngBox, rng, dtype=np.float32):
        super().__init__()
        self.layers = [
            TransformerDecoderLayer(dim, heads, ff_hidden, dropout_p, rngbox, rng, dtype)
            for _ in range(num_layers)
        ]
        self.ln_out = LayerNorm(dim, dtype=dtype)

    def __call__(self, x, memory, memory_mask: np.ndarray | None = None):
        self_bias = causal_bias(x.shape[1], x.dtype)
        cross_bias = key_padding_bias(memory_mask, x.dtype) if memory_mask is not None else None
        for layer in self.layers:
            x = layer(x, memory, self_bias, cross_bias)
        return self.ln_out(x)


def mean_pool_time(x, valid_mask: np.ndarray):
    """Masked mean over the time axis: (B, L, D), (B, L) -> (B, D)."""
    return T.masked_mean(x, valid_mask, axis=1)


def max_pool_time(x, valid_mask: np.ndarray):
    """Masked max over the time axis: (B, L, D), (B, L) -> (B, D)."""
    m = np.asarray(valid_mask, dtype=x.dtype)[..., None]
    shifted = T.add(x, Tensor((1.0 - m) * NEG_INF))
    return T.tmax(shifted, axis=1)
