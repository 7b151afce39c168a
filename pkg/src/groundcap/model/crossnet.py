"""Dual-pathway cross-encoder and keypoint query selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import ModelConfig
from ..nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from ..nn.layers import ModuleList
from ..nn.tensor import Tensor


class FusionBlock(Module):
    """Per-stream self-attention, simultaneous bidirectional cross-attention,
    per-stream FFN; pre-norm residuals throughout."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        d, h = cfg.d, cfg.heads
        self.self_v = MultiHeadAttention(d, h, rng, dtype=dtype)
        self.self_t = MultiHeadAttention(d, h, rng, dtype=dtype)
        self.cross_vt = MultiHeadAttention(d, h, rng, dtype=dtype)
        self.cross_tv = MultiHeadAttention(d, h, rng, dtype=dtype)
        self.ffn_v = FeedForward(d, cfg.ffn_hidden, rng, dtype=dtype)
        self.ffn_t = FeedForward(d, cfg.ffn_hidden, rng, dtype=dtype)
        self.ln = ModuleList([LayerNorm(d, dtype=dtype) for _ in range(8)])

    def __call__(self, v: Tensor, t: Tensor, text_valid: np.ndarray):
        hv = self.ln[0](v)
        v = v + self.self_v(hv, hv, hv)
        ht = self.ln[1](t)
        t = t + self.self_t(ht, ht, ht, key_valid=text_valid)
        # both cross passes read the post-self-attention streams
        hv, ht = self.ln[2](v), self.ln[3](t)
        v2 = v + self.cross_vt(hv, ht, ht, key_valid=text_valid)
        t2 = t + self.cross_tv(ht, hv, hv)
        v2 = v2 + self.ffn_v(self.ln[4](v2))
        t2 = t2 + self.ffn_t(self.ln[5](t2))
        return v2, t2


class CrossEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        self.blocks = ModuleList([FusionBlock(cfg, rng, dtype)
                                  for _ in range(cfg.fusion_blocks)])

    def __call__(self, v: Tensor, t: Tensor, text_valid: np.ndarray):
        """(B,n,d), (B,l,d) -> fused streams of identical shapes."""
        for blk in self.blocks:
            v, t = blk(v, t, text_valid)
        return v, t


@dataclass
class QuerySelection:
    indices: np.ndarray        # (B, k) into the n visual tokens
    q0: Tensor                 # (B, k, d)
    coords: np.ndarray         # (B, k, 3)
    objectness: Tensor         # (B, n) sigmoid scores
    logits: Tensor             # (B, n) raw head output


class KPSHead(Module):
    """Objectness scoring + stable top-k selection of decoder queries."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        self.score = Linear(cfg.d, 1, rng, dtype=dtype)
        # bias toward the expected positive rate so BCE starts calibrated
        self.score.bias.data[:] = -2.2

    def __call__(self, v: Tensor, coords: np.ndarray, k: int) -> QuerySelection:
        logits = self.score(v).reshape(v.shape[0], v.shape[1])
        objectness = logits.sigmoid()
        idx = top_k_stable(objectness.data, k)
        bidx = np.arange(v.shape[0])[:, None]
        q0 = v[(bidx, idx)]
        return QuerySelection(
            indices=idx,
            q0=q0,
            coords=coords[bidx, idx],
            objectness=objectness,
            logits=logits,
        )


def top_k_stable(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k indices per row, descending score, ties by lowest index."""
    if k > scores.shape[-1]:
        raise ValueError(f"k={k} exceeds token count {scores.shape[-1]}")
    order = np.argsort(-scores, axis=-1, kind="stable")
    return np.ascontiguousarray(order[..., :k])
