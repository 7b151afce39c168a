"""Toy visual and text encoders.

The point pathway is a two-stage set abstraction (fps + ball grouping +
shared MLP + max pool) followed by the parameter-free visual token query that
fixes the token count.  The grouping structure depends only on coordinates,
so it can be precomputed per scene (``build_geometry_cache``) and reused
across training steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import pointops
from ..config import ModelConfig
from ..nn import Embedding, FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from ..nn import functional as F  # noqa: F401  (re-exported for tests)
from ..nn.layers import sinusoidal_encoding, value_sinusoid_features
from ..nn.tensor import Tensor, concat

POS_FREQS = 8


@dataclass
class GeometryCache:
    """Per-scene constant index structure of the point pathway."""
    sa1_centers: np.ndarray   # (n1, 3)
    sa1_groups: np.ndarray    # (n1, k)
    sa2_centers: np.ndarray   # (n2, 3)
    sa2_groups: np.ndarray    # (n2, k)
    vtq_centers: np.ndarray   # (n_tokens, 3)
    vtq_groups: np.ndarray    # (n_tokens, k_q)


def build_geometry_cache(cloud: np.ndarray, cfg: ModelConfig,
                         start: int = 0) -> GeometryCache:
    """Run fps/ball_query for both abstraction stages and the token query.

    ``start`` seeds the fps start index (0 = deterministic; training-time
    augmentation may pass a random start).
    """
    xyz = np.ascontiguousarray(cloud[:, :3], dtype=np.float64)
    n = xyz.shape[0]
    n1, n2 = n // 4, n // 8
    idx1 = pointops.fps(xyz, n1, start=start)
    c1 = xyz[idx1]
    g1 = pointops.ball_query(c1, xyz, cfg.sa1_k, cfg.sa1_r).indices
    idx2 = pointops.fps(c1, n2, start=0)
    c2 = c1[idx2]
    g2 = pointops.ball_query(c2, c1, cfg.sa2_k, cfg.sa2_r).indices
    idxq = pointops.fps(xyz, cfg.n_tokens, start=start)
    cq = xyz[idxq]
    gq = pointops.ball_query(cq, c2, cfg.ball_k, cfg.ball_r).indices
    return GeometryCache(c1, g1, c2, g2, cq, gq)


class SetAbstraction(Module):
    """Group -> shared two-layer MLP on [relative xyz, features] -> max pool."""

    def __init__(self, d_in: int, d_out: int, rng, dtype):
        super().__init__()
        self.fc1 = Linear(d_in + 3, d_out, rng, dtype=dtype)
        self.fc2 = Linear(d_out, d_out, rng, dtype=dtype)

    def __call__(self, feats: Tensor, xyz: np.ndarray, centers: np.ndarray,
                 groups: np.ndarray) -> Tensor:
        b = feats.shape[0]
        bidx = np.arange(b)[:, None, None]
        grouped = feats[(bidx, groups)]                       # (B, n, k, d_in)
        rel = xyz[bidx, groups] - centers[:, :, None, :]      # constant
        rel_t = Tensor(rel.astype(feats.data.dtype))
        x = concat([grouped, rel_t], axis=-1)
        x = self.fc2(self.fc1(x).relu()).relu()
        return x.max(axis=2)


class PointEncoder(Module):
    """Two set-abstraction stages; output count n' = N/8 varies only with N.

    Stage-1 point features are rgb plus normalized height (full xy positions
    stay out of the features so the encoder cannot memorize layouts).
    """

    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        self.cfg = cfg
        self.sa1 = SetAbstraction(4, cfg.sa1_width, rng, dtype)
        self.sa2 = SetAbstraction(cfg.sa1_width, cfg.d_mid, rng, dtype)
        self.dtype = dtype

    def __call__(self, cloud: np.ndarray, cache: GeometryCache | list[GeometryCache] | None = None,
                 room_height: float = 3.0):
        """cloud (B, N, 6) -> (stage-2 coords (B, N/8, 3), features Tensor).

        ``cache`` may be one GeometryCache per batch item; when omitted it is
        built on the fly.
        """
        if cloud.ndim == 2:
            cloud = cloud[None]
        b = cloud.shape[0]
        if cache is None:
            cache = [build_geometry_cache(cloud[i], self.cfg) for i in range(b)]
        elif isinstance(cache, GeometryCache):
            cache = [cache]
        xyz = cloud[:, :, :3].astype(np.float64)
        z_norm = cloud[:, :, 2:3] / room_height
        feats = Tensor(np.concatenate([cloud[:, :, 3:6], z_norm], axis=-1).astype(self.dtype))
        c1 = np.stack([c.sa1_centers for c in cache])
        g1 = np.stack([c.sa1_groups for c in cache])
        c2 = np.stack([c.sa2_centers for c in cache])
        g2 = np.stack([c.sa2_groups for c in cache])
        f1 = self.sa1(feats, xyz, c1, g1)
        f2 = self.sa2(f1, c1, c2, g2)
        return c2, f2


class VisualTokenizer(Module):
    """Parameter-free token query plus the learned projection into model width.

    Token features = proj(max-pooled backbone features) + proj(coordinate
    sinusoids); coordinates are normalized by the scene extent.
    """

    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        self.cfg = cfg
        self.feat_proj = Linear(cfg.d_mid, cfg.d, rng, dtype=dtype)
        self.coord_proj = Linear(3 * 2 * POS_FREQS, cfg.d, rng, dtype=dtype)
        self.norm = LayerNorm(cfg.d, dtype=dtype)
        self.dtype = dtype

    def __call__(self, source_feat: Tensor, cache: list, extent: np.ndarray):
        b = source_feat.shape[0]
        bidx = np.arange(b)[:, None, None]
        cq = np.stack([c.vtq_centers for c in cache])          # (B, n, 3)
        gq = np.stack([c.vtq_groups for c in cache])           # (B, n, k_q)
        pooled = source_feat[(bidx, gq)].max(axis=2)           # (B, n, d_mid)
        coord_feats = value_sinusoid_features(
            (cq / extent[None, None, :]).astype(self.dtype), POS_FREQS)
        v = self.feat_proj(pooled) + self.coord_proj(Tensor(coord_feats))
        return cq, self.norm(v)


class TextEncoder(Module):
    """Embedding + sinusoidal positions + 2 pad-masked self-attention blocks."""

    def __init__(self, cfg: ModelConfig, rng, dtype, blocks: int = 2):
        super().__init__()
        self.emb = Embedding(cfg.vocab_size, cfg.d, rng, dtype=dtype)
        self.attn = [MultiHeadAttention(cfg.d, cfg.heads, rng, dtype=dtype) for _ in range(blocks)]
        self.ffn = [FeedForward(cfg.d, cfg.ffn_hidden, rng, dtype=dtype) for _ in range(blocks)]
        self.ln_a = [LayerNorm(cfg.d, dtype=dtype) for _ in range(blocks)]
        self.ln_f = [LayerNorm(cfg.d, dtype=dtype) for _ in range(blocks)]
        from ..nn.layers import ModuleList
        self.attn = ModuleList(self.attn)
        self.ffn = ModuleList(self.ffn)
        self.ln_a = ModuleList(self.ln_a)
        self.ln_f = ModuleList(self.ln_f)
        self.ln_out = LayerNorm(cfg.d, dtype=dtype)
        self.d = cfg.d
        self.dtype = dtype
        self.vocab_size = cfg.vocab_size

    def __call__(self, token_ids: np.ndarray, valid: np.ndarray) -> Tensor:
        token_ids = np.asarray(token_ids, dtype=np.int64)
        if token_ids.min() < 0 or token_ids.max() >= self.vocab_size:
            raise ValueError("token id outside vocabulary")
        x = self.emb(token_ids)
        pe = sinusoidal_encoding(token_ids.shape[1], self.d, dtype=self.dtype)
        x = x + Tensor(pe[None])
        for attn, ffn, ln_a, ln_f in zip(self.attn, self.ffn, self.ln_a, self.ln_f):
            h = ln_a(x)
            x = x + attn(h, h, h, key_valid=valid)
            x = x + ffn(ln_f(x))
        return self.ln_out(x)
