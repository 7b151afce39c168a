"""Module system and the transformer building blocks used across the model."""

from __future__ import annotations

import math

import numpy as np

from . import functional as F
from .tensor import Tensor


class Module:
    """Tracks parameters and submodules for optimizers and checkpoints."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, ModuleList):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for name, mod in self._modules.items():
            yield from mod.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state dict mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()


class ModuleList(Module):
    def __init__(self, mods):
        super().__init__()
        self._list = list(mods)
        for i, m in enumerate(self._list):
            self._modules[str(i)] = m

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


def _param(rng: np.random.Generator, shape, scale: float, dtype) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape).astype(dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, zero_init: bool = False, dtype=np.float32):
        super().__init__()
        if zero_init:
            self.weight = Tensor(np.zeros((d_in, d_out), dtype=dtype), requires_grad=True)
        else:
            scale = math.sqrt(6.0 / (d_in + d_out))
            self.weight = _param(rng, (d_in, d_out), scale, dtype)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.weight = Tensor((rng.normal(0.0, 0.02, size=(num, dim))).astype(dtype),
                             requires_grad=True)

    def __call__(self, ids: np.ndarray) -> Tensor:
        from .tensor import index_select
        return index_select(self.weight, np.asarray(ids, dtype=np.int64))


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32):
        super().__init__()
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).relu())


class MultiHeadAttention(Module):
    """Scaled dot-product attention over (batch, seq, dim) streams.

    ``key_valid`` is a (B, L_k) bool mask (True = attend); fully masked query
    rows yield exact-zero outputs.  ``attn_bias`` is an additive constant
    matrix, e.g. a causal mask.
    """

    def __init__(self, dim: int, heads: int, rng, dtype=np.float32):
        super().__init__()
        assert dim % heads == 0
        self.heads = heads
        self.d_head = dim // heads
        self.wq = Linear(dim, dim, rng, dtype=dtype)
        # a key bias shifts all scores of a query equally and cancels in the
        # softmax; leaving it out keeps every parameter's gradient meaningful
        self.wk = Linear(dim, dim, rng, bias=False, dtype=dtype)
        self.wv = Linear(dim, dim, rng, dtype=dtype)
        self.wo = Linear(dim, dim, rng, dtype=dtype)

    def _split(self, x: Tensor, b: int, n: int) -> Tensor:
        return x.reshape(b, n, self.heads, self.d_head).swapaxes(1, 2)

    def __call__(self, query: Tensor, key: Tensor, value: Tensor,
                 key_valid: np.ndarray | None = None,
                 attn_bias: np.ndarray | None = None) -> Tensor:
        b, nq = query.shape[0], query.shape[1]
        bk, nk = key.shape[0], key.shape[1]
        # scale folded into q (d_head wide) instead of the n x n score matrix
        q = self._split(self.wq(query), b, nq) * (1.0 / math.sqrt(self.d_head))
        # key/value batch may be 1 (shared context); matmul broadcasts it
        k = self._split(self.wk(key), bk, nk)
        v = self._split(self.wv(value), bk, nk)
        scores = q @ k.swapaxes(-1, -2)
        if attn_bias is not None:
            scores = scores + Tensor(np.asarray(attn_bias, dtype=scores.data.dtype))
        mask = None
        if key_valid is not None:
            mask = np.asarray(key_valid, dtype=bool)[:, None, None, :]
        attn = F.masked_attention_weights(scores, mask)
        out = (attn @ v).swapaxes(1, 2).reshape(b, nq, self.heads * self.d_head)
        return self.wo(out)


def sinusoidal_encoding(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Standard fixed sin/cos position table of shape (length, dim)."""
    pos = np.arange(length)[:, None].astype(np.float64)
    i = np.arange(dim // 2)[None, :].astype(np.float64)
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    out = np.zeros((length, dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out.astype(dtype)


def value_sinusoid_features(values: np.ndarray, n_freq: int = 8) -> np.ndarray:
    """Sin/cos features of continuous values (..., d) -> (..., d * 2*n_freq).

    Used for box position embeddings: each normalized coordinate is expanded
    at geometric frequencies before a learned projection.
    """
    freqs = (2.0 ** np.arange(n_freq)) * math.pi
    ang = values[..., None] * freqs
    feats = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
    return feats.reshape(*values.shape[:-1], values.shape[-1] * 2 * n_freq)


def tensor_value_sinusoids(x: Tensor, n_freq: int = 8) -> Tensor:
    """Differentiable twin of ``value_sinusoid_features`` (gradient flows to
    the values, e.g. box coordinates feeding position embeddings)."""
    from .tensor import concat
    freqs = ((2.0 ** np.arange(n_freq)) * math.pi).astype(x.data.dtype)
    ang = x.reshape(*x.shape, 1) * Tensor(freqs)
    feats = concat([ang.sin(), ang.cos()], axis=-1)
    return feats.reshape(*x.shape[:-1], x.shape[-1] * 2 * n_freq)
