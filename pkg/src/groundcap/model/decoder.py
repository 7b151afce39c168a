"""Stacked query decoder with dynamic box refinement and text alignment.

Every layer re-derives query position embeddings from its input boxes,
self-attends, cross-attends the fused text, and applies the (shared) box and
alignment heads.  All layer outputs are returned for deep supervision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..config import ModelConfig
from ..nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from ..nn import functional as F
from ..nn.layers import ModuleList, tensor_value_sinusoids
from ..nn.tensor import NEG_INF, Tensor, concat

POS_FREQS = 8
CENTER_STEP_BOUND = 1.0   # meters per layer
SIZE_LOG_BOUND = 2.0      # clamp on log-size deltas


@dataclass
class DecoderLayerOutput:
    q: Tensor            # (B, k, d)
    box: Tensor          # (B, k, 6) center+size, meters
    align: Tensor        # (B, k, l) query-token alignment logits
    noobj: Tensor        # (B, k) learned no-object slot logits
    pos_align: Tensor    # (B, k, l) position-pathway alignment logits


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        d, h = cfg.d, cfg.heads
        self.self_attn = MultiHeadAttention(d, h, rng, dtype=dtype)
        self.cross_attn = MultiHeadAttention(d, h, rng, dtype=dtype)
        self.ffn = FeedForward(d, cfg.ffn_hidden, rng, dtype=dtype)
        self.ln1 = LayerNorm(d, dtype=dtype)
        self.ln2 = LayerNorm(d, dtype=dtype)
        self.ln3 = LayerNorm(d, dtype=dtype)

    def __call__(self, q: Tensor, pos: Tensor, t: Tensor, text_valid: np.ndarray) -> Tensor:
        hq = self.ln1(q)
        h = hq + pos
        q = q + self.self_attn(h, h, hq)
        q = q + self.cross_attn(self.ln2(q) + pos, t, t, key_valid=text_valid)
        return q + self.ffn(self.ln3(q))


class BoxHead(Module):
    """Bounded center offsets and clamped multiplicative size updates.

    The final linears start at zero so boxes are stationary at init and the
    zero-weight identity contract holds by construction.
    """

    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        d = cfg.d
        self.center_fc1 = Linear(d, d, rng, dtype=dtype)
        self.center_fc2 = Linear(d, 3, rng, zero_init=True, dtype=dtype)
        self.size_fc1 = Linear(d, d, rng, dtype=dtype)
        self.size_fc2 = Linear(d, 3, rng, zero_init=True, dtype=dtype)

    def __call__(self, q: Tensor, box_prev: Tensor) -> Tensor:
        center_prev = box_prev[:, :, :3]
        size_prev = box_prev[:, :, 3:]
        delta_c = self.center_fc2(self.center_fc1(q).relu()).tanh() * CENTER_STEP_BOUND
        delta_s = self.size_fc2(self.size_fc1(q).relu()).clip(-SIZE_LOG_BOUND, SIZE_LOG_BOUND)
        center = center_prev + delta_c
        size = size_prev * delta_s.exp()
        return concat([center, size], axis=-1)


class AlignHead(Module):
    """Scaled dot-product of projected queries against projected text, plus a
    learned no-object slot competing in the loss softmax."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        d = cfg.d
        self.proj_q = Linear(d, d, rng, dtype=dtype)
        self.proj_t = Linear(d, d, rng, dtype=dtype)
        self.no_object = Tensor(
            (rng.normal(0.0, 0.02, size=d)).astype(dtype), requires_grad=True)
        self.scale = 1.0 / math.sqrt(d)

    def __call__(self, q: Tensor, t: Tensor, text_valid: np.ndarray):
        aq = self.proj_q(q)
        at = self.proj_t(t)
        logits = (aq @ at.swapaxes(-1, -2)) * self.scale
        mask = np.where(np.asarray(text_valid, bool), 0.0, NEG_INF)
        logits = logits + Tensor(mask[:, None, :].astype(logits.data.dtype))
        noobj = (aq @ self.no_object.reshape(-1, 1)).reshape(q.shape[0], q.shape[1]) * self.scale
        return logits, noobj

    def project_queries(self, q: Tensor) -> Tensor:
        return self.proj_q(q)


class BoxPositionEncoder(Module):
    """Sinusoid features of extent-normalized (center, size), projected to d."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        self.proj = Linear(6 * 2 * POS_FREQS, cfg.d, rng, dtype=dtype)
        self.dtype = dtype

    def __call__(self, box: Tensor, extent: np.ndarray) -> Tensor:
        norm = np.concatenate([extent, extent]).astype(self.dtype)
        feats = tensor_value_sinusoids(box * Tensor(1.0 / norm), POS_FREQS)
        return self.proj(feats)


class QueryDecoder(Module):
    """L decoder layers; box/align heads are shared across layers."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        self.cfg = cfg
        self.layers = ModuleList([DecoderLayer(cfg, rng, dtype)
                                  for _ in range(cfg.decoder_layers)])
        self.box_head = BoxHead(cfg, rng, dtype)
        self.align_head = AlignHead(cfg, rng, dtype)
        self.pos_align_proj = Linear(cfg.d, cfg.d, rng, dtype=dtype)
        self.box_pos = BoxPositionEncoder(cfg, rng, dtype)
        self.dtype = dtype

    def initial_boxes(self, coords: np.ndarray) -> Tensor:
        sizes = np.full_like(coords, self.cfg.init_box_size)
        return Tensor(np.concatenate([coords, sizes], axis=-1).astype(self.dtype))

    def __call__(self, q0: Tensor, coords: np.ndarray, t: Tensor,
                 text_valid: np.ndarray, extent: np.ndarray) -> list[DecoderLayerOutput]:
        q = q0
        box = self.initial_boxes(coords)
        outputs: list[DecoderLayerOutput] = []
        for layer in self.layers:
            pos = self.box_pos(box, extent)
            q = layer(q, pos, t, text_valid)
            box = self.box_head(q, box)
            align, noobj = self.align_head(q, t, text_valid)
            pos_out = self.box_pos(box, extent)
            at = self.align_head.proj_t(t)
            pos_align = (self.pos_align_proj(pos_out) @ at.swapaxes(-1, -2)) * self.align_head.scale
            mask = np.where(np.asarray(text_valid, bool), 0.0, NEG_INF)
            pos_align = pos_align + Tensor(mask[:, None, :].astype(self.dtype))
            outputs.append(DecoderLayerOutput(q=q, box=box, align=align,
                                              noobj=noobj, pos_align=pos_align))
        return outputs


def referring_scores(align_logits, span: tuple[int, int], valid: np.ndarray):
    """Probability mass each query's token softmax puts on ``span``.

    Accepts a Tensor (training, gradient flows) or ndarray (inference) of
    shape (k, l); ``valid`` masks pad columns; span is half-open.
    """
    s, e = span
    if e <= s:
        raise ValueError("empty span")
    valid = np.asarray(valid, bool)
    if isinstance(align_logits, Tensor):
        bias = Tensor(np.where(valid, 0.0, NEG_INF).astype(align_logits.data.dtype))
        probs = F.softmax(align_logits + bias, axis=-1)
        return probs[:, s:e].sum(axis=-1)
    logits = np.where(valid, align_logits, NEG_INF)
    m = logits.max(axis=-1, keepdims=True)
    p = np.exp(logits - m)
    p /= p.sum(axis=-1, keepdims=True)
    return p[:, s:e].sum(axis=-1)
