"""Caption head: a small transformer decoder fed two visual cues.

The query embedding replaces the start-of-sequence slot of each caption, and
every position cross-attends the full fused visual token set.  Decoding is
greedy or multinomial; both re-run the teacher-forced stack on the growing
prefix (sequences are short, no KV cache needed).
"""

from __future__ import annotations

import numpy as np

from .. import vocab
from ..config import ModelConfig
from ..nn import Embedding, FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from ..nn import functional as F
from ..nn.layers import ModuleList, sinusoidal_encoding
from ..nn.tensor import NEG_INF, Tensor, concat, no_grad


class CaptionBlock(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        d, h = cfg.d, cfg.heads
        self.self_attn = MultiHeadAttention(d, h, rng, dtype=dtype)
        self.cross_attn = MultiHeadAttention(d, h, rng, dtype=dtype)
        self.ffn = FeedForward(d, cfg.ffn_hidden, rng, dtype=dtype)
        self.ln1 = LayerNorm(d, dtype=dtype)
        self.ln2 = LayerNorm(d, dtype=dtype)
        self.ln3 = LayerNorm(d, dtype=dtype)

    def __call__(self, x: Tensor, v: Tensor, causal: np.ndarray) -> Tensor:
        h = self.ln1(x)
        x = x + self.self_attn(h, h, h, attn_bias=causal)
        x = x + self.cross_attn(self.ln2(x), v, v)
        return x + self.ffn(self.ln3(x))


def causal_bias(t: int, dtype) -> np.ndarray:
    bias = np.zeros((t, t), dtype=dtype)
    bias[np.triu_indices(t, k=1)] = NEG_INF
    return bias


class Captioner(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        self.cfg = cfg
        self.dtype = dtype
        self.query_proj = Linear(cfg.d, cfg.d, rng, dtype=dtype)
        self.emb = Embedding(cfg.vocab_size, cfg.d, rng, dtype=dtype)
        self.blocks = ModuleList([CaptionBlock(cfg, rng, dtype)
                                  for _ in range(cfg.caption_blocks)])
        self.ln_out = LayerNorm(cfg.d, dtype=dtype)
        self.head = Linear(cfg.d, cfg.vocab_size, rng, dtype=dtype)

    def forward(self, queries: Tensor, v: Tensor, tokens: np.ndarray) -> Tensor:
        """Teacher-forced logits.

        queries (G, d); v (n, d) shared visual context; tokens (G, T) whose
        slot 0 is the SOS placeholder (never embedded - the projected query
        takes its place).  Returns (G, T, vocab); position t predicts token
        t+1.  Causal masking guarantees step-t logits ignore later tokens.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None]
        g, t_len = tokens.shape
        if t_len > self.cfg.t_max + 1:
            raise ValueError(f"caption length {t_len} exceeds t_max={self.cfg.t_max}")
        if queries.ndim == 1:
            queries = queries.reshape(1, -1)
        prefix = self.query_proj(queries).reshape(g, 1, -1)
        if t_len > 1:
            x = concat([prefix, self.emb(tokens[:, 1:])], axis=1)
        else:
            x = prefix
        pe = sinusoidal_encoding(t_len, self.cfg.d, dtype=self.dtype)
        x = x + Tensor(pe[None])
        bias = causal_bias(t_len, self.dtype)
        v3 = v.reshape(1, *v.shape) if v.ndim == 2 else v
        for blk in self.blocks:
            x = blk(x, v3, bias)
        return self.head(self.ln_out(x))

    __call__ = forward

    def greedy(self, queries: Tensor, v: Tensor, t_max: int | None = None) -> np.ndarray:
        """Argmax decode; stops per-row at EOS or after t_max generated tokens.

        Returns (G, <=t_max+1) int array: SOS slot, generated tokens, EOS/PAD.
        """
        t_max = t_max or self.cfg.t_max
        if queries.ndim == 1:
            queries = queries.reshape(1, -1)
        g = queries.shape[0]
        tokens = np.full((g, 1), vocab.SOS_ID, dtype=np.int64)
        done = np.zeros(g, dtype=bool)
        with no_grad():
            for _ in range(t_max):
                logits = self.forward(queries, v, tokens)
                nxt = np.argmax(logits.data[:, -1, :], axis=-1)
                nxt = np.where(done, vocab.PAD_ID, nxt)
                tokens = np.concatenate([tokens, nxt[:, None]], axis=1)
                done |= nxt == vocab.EOS_ID
                if done.all():
                    break
        return tokens

    def sample(self, queries: Tensor, v: Tensor, seed: int,
               t_max: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Multinomial decode at temperature 1 with per-step log-probs.

        Returns (tokens (G, T), logprobs (G, T-1)); logprob[t] scores
        tokens[t+1], zeros after EOS.
        """
        t_max = t_max or self.cfg.t_max
        if queries.ndim == 1:
            queries = queries.reshape(1, -1)
        g = queries.shape[0]
        rng = np.random.default_rng(seed)
        tokens = np.full((g, 1), vocab.SOS_ID, dtype=np.int64)
        done = np.zeros(g, dtype=bool)
        logps: list[np.ndarray] = []
        with no_grad():
            for _ in range(t_max):
                logits = self.forward(queries, v, tokens).data[:, -1, :]
                m = logits.max(axis=-1, keepdims=True)
                p = np.exp((logits - m).astype(np.float64))
                p /= p.sum(axis=-1, keepdims=True)
                nxt = np.array([rng.choice(p.shape[1], p=p[i]) for i in range(g)])
                lp = np.log(p[np.arange(g), nxt])
                lp[done] = 0.0
                nxt = np.where(done, vocab.PAD_ID, nxt)
                logps.append(lp)
                tokens = np.concatenate([tokens, nxt[:, None]], axis=1)
                done |= nxt == vocab.EOS_ID
                if done.all():
                    break
        return tokens, np.stack(logps, axis=1)

    def sequence_logprob(self, queries: Tensor, v: Tensor, tokens: np.ndarray) -> Tensor:
        """Differentiable sum of log-probs of ``tokens`` (pads excluded).

        The SCST path: sample without grad, then score the sampled sequence
        with one teacher-forced pass.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        logits = self.forward(queries, v, tokens[:, :-1])
        logp = F.log_softmax(logits, axis=-1)
        g, t1 = tokens.shape[0], tokens.shape[1] - 1
        targets = tokens[:, 1:]
        gathered = logp[(np.arange(g)[:, None], np.arange(t1)[None, :], targets)]
        step_valid = (targets != vocab.PAD_ID).astype(logp.data.dtype)
        return (gathered * Tensor(step_valid)).sum(axis=1)
