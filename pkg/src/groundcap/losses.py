"""Training objectives: assignment, per-layer grounding losses, caption losses.

All loss functions take one sample's tensors (no batch axis); the runner
averages over the batch.  Matching is computed outside the autodiff graph and
passed in, so gradients flow only through the loss terms themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import vocab
from .metrics import pairwise_giou
from .model.decoder import DecoderLayerOutput
from .nn import functional as F
from .nn.tensor import NEG_INF, Tensor, concat, maximum, minimum

MATCH_W_ALIGN = 2.0
MATCH_W_CENTER = 5.0
MATCH_W_GIOU = 2.0
KPS_POSITIVES_PER_OBJECT = 4
NO_OBJECT_COEF = 0.1   # down-weights unmatched queries' no-object terms


@dataclass
class SampleTargets:
    """Ground truth referenced by one text sample."""
    boxes: np.ndarray                      # (G, 6)
    spans: list[tuple[int, int]]           # token span per GT
    object_ids: list[int]
    captions: list[list[int]] | None = None  # per GT, prompt samples only


@dataclass
class Matching:
    pairs: list[tuple[int, int]]           # (query_index, gt_index)

    @property
    def query_idx(self) -> np.ndarray:
        return np.array([q for q, _ in self.pairs], dtype=np.int64)

    @property
    def gt_idx(self) -> np.ndarray:
        return np.array([g for _, g in self.pairs], dtype=np.int64)

    def unmatched_queries(self, k: int) -> np.ndarray:
        used = {q for q, _ in self.pairs}
        return np.array([q for q in range(k) if q not in used], dtype=np.int64)


def span_masses(align: np.ndarray, valid: np.ndarray,
                spans: list[tuple[int, int]]) -> np.ndarray:
    """(k, G) softmax mass each query assigns to each GT span (numpy path)."""
    logits = np.where(valid, align, NEG_INF)
    m = logits.max(axis=-1, keepdims=True)
    p = np.exp(logits - m)
    p /= p.sum(axis=-1, keepdims=True)
    return np.stack([p[:, s:e].sum(axis=-1) for s, e in spans], axis=1)


def hungarian_match(layer: DecoderLayerOutput, targets: SampleTargets,
                    valid: np.ndarray, batch_index: int = 0) -> Matching:
    """Optimal injective assignment of queries to GT objects.

    cost(q, g) = 2(1 - span mass) + 5 |center diff|_1 + 2 (1 - GIoU).
    """
    boxes = layer.box.data[batch_index]
    align = layer.align.data[batch_index]
    return hungarian_match_arrays(boxes, align, valid, targets)


def hungarian_match_arrays(boxes: np.ndarray, align: np.ndarray,
                           valid: np.ndarray, targets: SampleTargets) -> Matching:
    k = boxes.shape[0]
    g = targets.boxes.shape[0]
    if g < 1:
        raise ValueError("need at least one referenced GT object")
    if g > k:
        raise ValueError(f"{g} GT objects exceed {k} queries")
    s = span_masses(align, valid, targets.spans)
    l1 = np.abs(boxes[:, None, :3] - targets.boxes[None, :, :3]).sum(axis=-1)
    giou = pairwise_giou(boxes, targets.boxes)
    cost = (MATCH_W_ALIGN * (1.0 - s) + MATCH_W_CENTER * l1
            + MATCH_W_GIOU * (1.0 - giou))
    rows, cols = linear_sum_assignment(cost)
    return Matching(pairs=sorted(zip(rows.tolist(), cols.tolist()), key=lambda p: p[1]))


# -- box losses -----------------------------------------------------------------

def loss_coord(pred_boxes: Tensor, matching: Matching, targets: SampleTargets) -> Tensor:
    gt = targets.boxes[matching.gt_idx, :3].astype(pred_boxes.data.dtype)
    pred = pred_boxes[matching.query_idx][:, :3]
    return F.smooth_l1(pred - Tensor(gt)).mean()


def loss_size(pred_boxes: Tensor, matching: Matching, targets: SampleTargets) -> Tensor:
    gt = targets.boxes[matching.gt_idx, 3:].astype(pred_boxes.data.dtype)
    pred = pred_boxes[matching.query_idx][:, 3:]
    return F.smooth_l1(pred - Tensor(gt)).mean()


def tensor_giou(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Differentiable GIoU of matched (M,6) boxes against constants."""
    gt = Tensor(gt.astype(pred.data.dtype))
    p_lo = pred[:, :3] - pred[:, 3:] * 0.5
    p_hi = pred[:, :3] + pred[:, 3:] * 0.5
    g_lo = gt[:, :3] - gt[:, 3:] * 0.5
    g_hi = gt[:, :3] + gt[:, 3:] * 0.5
    edge = (minimum(p_hi, g_hi) - maximum(p_lo, g_lo)).relu()
    inter = edge[:, 0] * edge[:, 1] * edge[:, 2]
    vol_p = pred[:, 3] * pred[:, 4] * pred[:, 5]
    vol_g = gt[:, 3] * gt[:, 4] * gt[:, 5]
    union = vol_p + vol_g - inter
    hedge = maximum(p_hi, g_hi) - minimum(p_lo, g_lo)
    hull = hedge[:, 0] * hedge[:, 1] * hedge[:, 2]
    return inter / union - (hull - union) / hull


def loss_giou(pred_boxes: Tensor, matching: Matching, targets: SampleTargets) -> Tensor:
    gt = targets.boxes[matching.gt_idx]
    pred = pred_boxes[matching.query_idx]
    return (1.0 - tensor_giou(pred, gt)).mean()


# -- alignment losses -------------------------------------------------------------

def loss_sem(align: Tensor, noobj: Tensor, matching: Matching,
             targets: SampleTargets, valid: np.ndarray,
             direction: str = "both") -> Tensor:
    """Symmetric span-contrastive alignment.

    query->token: softmax over (valid tokens + learned no-object slot); a
    matched query's loss is -log(mass on its GT span); unmatched queries are
    pushed onto the no-object slot with a 0.1 coefficient (the no-object
    majority must not drown the matched-span signal).  token->query: softmax
    over queries per span token, target = the query matched to that token's
    object.
    """
    k, length = align.shape
    bias = Tensor(np.where(np.asarray(valid, bool), 0.0, NEG_INF).astype(align.data.dtype))
    ext = concat([align + bias, noobj.reshape(k, 1)], axis=1)
    logp = F.log_softmax(ext, axis=-1)
    terms: list[Tensor] = []
    if direction in ("both", "qt"):
        for q, g in matching.pairs:
            s, e = targets.spans[g]
            terms.append(-F.logsumexp(logp[q, s:e], axis=-1))
        matched_sum = sum_tensors(terms)
        weight = float(len(terms))
        unmatched = matching.unmatched_queries(k)
        if unmatched.size:
            cols = np.full(unmatched.size, length, dtype=np.int64)
            matched_sum = matched_sum + (-logp[(unmatched, cols)]).sum() * NO_OBJECT_COEF
            weight += NO_OBJECT_COEF * unmatched.size
        qt = matched_sum * (1.0 / weight)
        if direction == "qt":
            return qt
    if direction in ("both", "tq"):
        logq = F.log_softmax(align, axis=0)
        rows, cols = [], []
        for q, g in matching.pairs:
            s, e = targets.spans[g]
            for t in range(s, e):
                rows.append(q)
                cols.append(t)
        tq = (-logq[(np.array(rows), np.array(cols))]).mean()
        if direction == "tq":
            return tq
    return (qt + tq) * 0.5


def loss_pos(pos_align: Tensor, matching: Matching, targets: SampleTargets,
             valid: np.ndarray) -> Tensor:
    """Span concentration of the position-pathway logits (matched queries)."""
    bias = Tensor(np.where(np.asarray(valid, bool), 0.0, NEG_INF).astype(pos_align.data.dtype))
    logp = F.log_softmax(pos_align + bias, axis=-1)
    terms = []
    for q, g in matching.pairs:
        s, e = targets.spans[g]
        terms.append(-F.logsumexp(logp[q, s:e], axis=-1))
    return sum_tensors(terms) * (1.0 / len(terms))


def sum_tensors(ts: list[Tensor]) -> Tensor:
    total = ts[0]
    for t in ts[1:]:
        total = total + t
    return total


# -- KPS loss ----------------------------------------------------------------------

def kps_positive_labels(coords: np.ndarray, gt_boxes: np.ndarray,
                        per_object: int = KPS_POSITIVES_PER_OBJECT) -> np.ndarray:
    """0/1 labels over tokens: per GT box, its <=4 in-box tokens nearest center."""
    n = coords.shape[0]
    labels = np.zeros(n, dtype=np.float64)
    for box in gt_boxes:
        center, size = box[:3], box[3:]
        inside = np.all(np.abs(coords - center) <= size / 2 + 1e-9, axis=1)
        idx = np.flatnonzero(inside)
        if idx.size == 0:
            continue
        d = np.linalg.norm(coords[idx] - center, axis=1)
        keep = idx[np.argsort(d, kind="stable")[:per_object]]
        labels[keep] = 1.0
    return labels


def loss_kps(kps_logits: Tensor, coords: np.ndarray, gt_boxes: np.ndarray) -> Tensor:
    labels = kps_positive_labels(coords, gt_boxes)
    return F.binary_cross_entropy_with_logits(kps_logits, labels)


# -- caption losses -----------------------------------------------------------------

def loss_cap_mle(logits: Tensor, tokens: np.ndarray) -> Tensor:
    """Teacher-forced token cross-entropy, averaged over non-pad steps.

    logits (G, T-1, V) predict tokens[:, 1:]; PAD targets are excluded.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    targets = tokens[:, 1:]
    logp = F.log_softmax(logits, axis=-1)
    g, t1 = targets.shape
    picked = logp[(np.arange(g)[:, None], np.arange(t1)[None, :], targets)]
    mask = (targets != vocab.PAD_ID).astype(logp.data.dtype)
    denom = max(float(mask.sum()), 1.0)
    return -(picked * Tensor(mask)).sum() * (1.0 / denom)


def loss_scst(logprob_sums: Tensor, sampled_rewards: np.ndarray,
              greedy_rewards: np.ndarray) -> Tensor:
    """Policy gradient surrogate: -mean(advantage * sequence log-prob)."""
    adv = (np.asarray(sampled_rewards, dtype=np.float64)
           - np.asarray(greedy_rewards, dtype=np.float64))
    return -(logprob_sums * Tensor(adv.astype(logprob_sums.data.dtype))).mean()


# -- composition ----------------------------------------------------------------------

@dataclass
class LossReport:
    l_coord: list[float]
    l_size: list[float]
    l_giou: list[float]
    l_sem: list[float]
    l_pos: list[float]
    l_kps: float
    l_cap: float
    l_vg: float
    total: Tensor = field(repr=False)

    @property
    def total_value(self) -> float:
        return float(self.total.data)


def loss_dec_layer(components: dict[str, Tensor], beta) -> Tensor:
    b1, b2, b3, b4, b5 = beta
    return (components["coord"] * b1 + components["size"] * b2
            + components["giou"] * b3 + components["sem"] * b4
            + components["pos"] * b5)


def compose_total(layer_components: list[dict[str, Tensor]], l_cap: Tensor | float,
                  l_kps: Tensor | float, alpha: tuple[float, float, float],
                  beta) -> LossReport:
    """alpha = (alpha1, alpha2, alpha3); vg loss is the layer mean."""
    a1, a2, a3 = alpha
    per_layer = [loss_dec_layer(c, beta) for c in layer_components]
    l_vg = sum_tensors(per_layer) * (1.0 / len(per_layer))
    l_cap_t = l_cap if isinstance(l_cap, Tensor) else Tensor(np.float64(l_cap))
    l_kps_t = l_kps if isinstance(l_kps, Tensor) else Tensor(np.float64(l_kps))
    total = l_vg * a1 + l_cap_t * a2 + l_kps_t * a3
    return LossReport(
        l_coord=[float(c["coord"].data) for c in layer_components],
        l_size=[float(c["size"].data) for c in layer_components],
        l_giou=[float(c["giou"].data) for c in layer_components],
        l_sem=[float(c["sem"].data) for c in layer_components],
        l_pos=[float(c["pos"].data) for c in layer_components],
        l_kps=float(l_kps_t.data),
        l_cap=float(l_cap_t.data),
        l_vg=float(l_vg.data),
        total=total,
    )


def vg_sample_losses(layers: list[DecoderLayerOutput], targets: SampleTargets,
                     valid: np.ndarray, batch_index: int = 0,
                     matchings: list[Matching] | None = None):
    """Per-layer matching + the five decoder loss terms for one sample.

    The position-alignment term is computed once, on the first decoder
    layer's position-conditioned logits under that layer's matching, and
    enters every layer's weighted sum unchanged.  Pass precomputed
    ``matchings`` to keep the assignment fixed (finite-difference checks
    differentiate the loss at a frozen matching).
    """
    components: list[dict[str, Tensor]] = []
    fixed = matchings
    matchings = []
    pos_term: Tensor | None = None
    for li, layer in enumerate(layers):
        if fixed is not None:
            m = fixed[li]
        else:
            m = hungarian_match(layer, targets, valid, batch_index)
        matchings.append(m)
        box_b = layer.box[batch_index]
        align_b = layer.align[batch_index]
        noobj_b = layer.noobj[batch_index]
        if li == 0:
            pos_term = loss_pos(layer.pos_align[batch_index], m, targets, valid)
        components.append({
            "coord": loss_coord(box_b, m, targets),
            "size": loss_size(box_b, m, targets),
            "giou": loss_giou(box_b, m, targets),
            "sem": loss_sem(align_b, noobj_b, m, targets, valid),
            "pos": pos_term,
        })
    return components, matchings
