"""Fused numerical ops with analytic backward passes."""

from __future__ import annotations

import numpy as np

from .tensor import NEG_INF, Tensor


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    out_data = x.data - m
    np.exp(out_data, out=out_data)
    out_data /= out_data.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            gx = g - dot          # fresh buffer; safe to finish in place
            gx *= out_data
            x._accumulate(gx)

    return Tensor._result(out_data, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def backward(g):
        if x.requires_grad:
            p = np.exp(out_data)
            x._accumulate(g - p * g.sum(axis=axis, keepdims=True))

    return Tensor._result(out_data, (x,), backward)


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out_keep = np.log(s) + m
    out_data = out_keep if keepdims else np.squeeze(out_keep, axis=axis)

    def backward(g):
        if x.requires_grad:
            gg = g if keepdims else np.expand_dims(g, axis)
            x._accumulate(gg * (e / s))

    return Tensor._result(out_data, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with learned scale/shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out_data = gamma.data * xhat + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, x.data.shape[-1]).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, x.data.shape[-1]).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            mean_d = dxhat.mean(axis=-1, keepdims=True)
            mean_dx = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv_std * (dxhat - mean_d - xhat * mean_dx))

    return Tensor._result(out_data, (x, gamma, beta), backward)


def masked_attention_weights(scores: Tensor, key_valid: np.ndarray | None) -> Tensor:
    """Softmax over the last axis with invalid keys excluded.

    ``key_valid`` broadcasts against scores (True = attend).  Rows whose keys
    are all invalid come back as exact zeros so the attention contributes
    nothing (instead of a garbage uniform average).
    """
    if key_valid is None:
        return softmax(scores, axis=-1)
    key_valid = np.asarray(key_valid, dtype=bool)
    bias = np.where(key_valid, 0.0, NEG_INF).astype(scores.data.dtype)
    attn = softmax(scores + Tensor(bias), axis=-1)
    any_valid = key_valid.any(axis=-1, keepdims=True)
    if not any_valid.all():
        attn = attn * Tensor(any_valid.astype(scores.data.dtype))
    return attn


def smooth_l1(residual: Tensor, beta: float = 1.0) -> Tensor:
    """Elementwise smooth-L1 (quadratic inside ``beta``, linear outside)."""
    a = residual.abs()
    quad = (residual * residual) * (0.5 / beta)
    lin = a - (0.5 * beta)
    from .tensor import where
    return where(a.data < beta, quad, lin)


def binary_cross_entropy_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Numerically stable mean BCE from logits against constant 0/1 targets."""
    t = np.asarray(targets, dtype=logits.data.dtype)
    # softplus(x) - x*t  ==  -[t*log(sig(x)) + (1-t)*log(1-sig(x))]
    x = logits
    softplus = maximum_const(x, 0.0) + ((x.abs() * -1.0).exp() + 1.0).log()
    return (softplus - x * Tensor(t)).mean()


def maximum_const(x: Tensor, c: float) -> Tensor:
    from .tensor import where
    return where(x.data >= c, x, Tensor(np.full_like(x.data, c)))
