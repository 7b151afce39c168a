"""Evaluation: box IoU/GIoU, stratified grounding accuracy, caption metrics.

Boxes are (center xyz, size xyz) axis-aligned, meters.  Language metrics
operate on token sequences (any hashable tokens; callers strip specials).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

CIDER_N = 4
CIDER_SIGMA = 6.0
ROUGE_BETA = 1.2
BLEU_EPS = 1e-9


# -- geometry ----------------------------------------------------------------

def _check_box(box) -> np.ndarray:
    box = np.asarray(box, dtype=np.float64)
    if np.any(box[..., 3:] <= 0):
        raise ValueError("box sizes must be positive")
    return box


def iou_aabb(a, b) -> float:
    """Volume IoU of two center+size boxes."""
    a = _check_box(a)
    b = _check_box(b)
    lo = np.maximum(a[:3] - a[3:] / 2, b[:3] - b[3:] / 2)
    hi = np.minimum(a[:3] + a[3:] / 2, b[:3] + b[3:] / 2)
    inter = float(np.prod(np.clip(hi - lo, 0, None)))
    union = float(np.prod(a[3:])) + float(np.prod(b[3:])) - inter
    return inter / union


def giou_aabb(a, b) -> float:
    """IoU minus the enclosing-hull deadspace ratio; range (-1, 1]."""
    a = _check_box(a)
    b = _check_box(b)
    lo = np.maximum(a[:3] - a[3:] / 2, b[:3] - b[3:] / 2)
    hi = np.minimum(a[:3] + a[3:] / 2, b[:3] + b[3:] / 2)
    inter = float(np.prod(np.clip(hi - lo, 0, None)))
    union = float(np.prod(a[3:])) + float(np.prod(b[3:])) - inter
    hlo = np.minimum(a[:3] - a[3:] / 2, b[:3] - b[3:] / 2)
    hhi = np.maximum(a[:3] + a[3:] / 2, b[:3] + b[3:] / 2)
    hull = float(np.prod(hhi - hlo))
    return inter / union - (hull - union) / hull


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(n,6) x (m,6) -> (n,m) IoU matrix."""
    a = np.asarray(a, np.float64)[:, None, :]
    b = np.asarray(b, np.float64)[None, :, :]
    lo = np.maximum(a[..., :3] - a[..., 3:] / 2, b[..., :3] - b[..., 3:] / 2)
    hi = np.minimum(a[..., :3] + a[..., 3:] / 2, b[..., :3] + b[..., 3:] / 2)
    inter = np.prod(np.clip(hi - lo, 0, None), axis=-1)
    union = np.prod(a[..., 3:], axis=-1) + np.prod(b[..., 3:], axis=-1) - inter
    return inter / union


def pairwise_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, np.float64)[:, None, :]
    b = np.asarray(b, np.float64)[None, :, :]
    lo = np.maximum(a[..., :3] - a[..., 3:] / 2, b[..., :3] - b[..., 3:] / 2)
    hi = np.minimum(a[..., :3] + a[..., 3:] / 2, b[..., :3] + b[..., 3:] / 2)
    inter = np.prod(np.clip(hi - lo, 0, None), axis=-1)
    union = np.prod(a[..., 3:], axis=-1) + np.prod(b[..., 3:], axis=-1) - inter
    hlo = np.minimum(a[..., :3] - a[..., 3:] / 2, b[..., :3] - b[..., 3:] / 2)
    hhi = np.maximum(a[..., :3] + a[..., 3:] / 2, b[..., :3] + b[..., 3:] / 2)
    hull = np.prod(hhi - hlo, axis=-1)
    return inter / union - (hull - union) / hull


# -- grounding accuracy --------------------------------------------------------

@dataclass
class EvalRecord:
    """Per-threshold stratified accuracy plus the raw per-sample IoUs."""
    threshold: float
    overall: float
    unique: float
    multiple: float
    n_samples: int
    ious: list[float] = field(default_factory=list)


def acc_at_iou(samples: list[tuple], threshold: float) -> EvalRecord:
    """samples: (pred_box or None, gt_box, stratum) triples.

    Missing predictions count as misses.  Threshold comparison is >= (the
    community convention for "IoU greater than k").
    """
    hits = {"unique": [], "multiple": []}
    ious = []
    for pred, gt, stratum in samples:
        if stratum not in hits:
            raise ValueError(f"unknown stratum {stratum!r}")
        iou = iou_aabb(pred, gt) if pred is not None else 0.0
        ious.append(iou)
        hits[stratum].append(iou >= threshold)
    n_u, n_m = len(hits["unique"]), len(hits["multiple"])
    acc_u = float(np.mean(hits["unique"])) if n_u else 0.0
    acc_m = float(np.mean(hits["multiple"])) if n_m else 0.0
    total_hits = sum(hits["unique"]) + sum(hits["multiple"])
    overall = total_hits / (n_u + n_m) if (n_u + n_m) else 0.0
    return EvalRecord(threshold=threshold, overall=overall, unique=acc_u,
                      multiple=acc_m, n_samples=n_u + n_m, ious=ious)


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float = 0.25) -> list[int]:
    """Greedy non-maximum suppression keyed on score; returns kept indices."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    keep: list[int] = []
    for i in order:
        if all(iou_aabb(boxes[i], boxes[j]) < iou_threshold for j in keep):
            keep.append(int(i))
    return keep


# -- n-gram helpers -----------------------------------------------------------

def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# -- CIDEr-D -------------------------------------------------------------------

def cider_document_frequencies(reference_sets: list[list], n: int = CIDER_N) -> tuple[Counter, int]:
    """(df counter, document count) over a corpus of reference sets."""
    df: Counter = Counter()
    for refs in reference_sets:
        seen = set()
        for ref in refs:
            for k in range(1, n + 1):
                seen.update(_ngrams(ref, k).keys())
        df.update(seen)
    return df, len(reference_sets)


def cider_d(candidates: list, references: list[list], n: int = CIDER_N,
            sigma: float = CIDER_SIGMA, df: Counter | None = None,
            n_docs: int | None = None) -> np.ndarray:
    """Per-candidate CIDEr-D over an evaluation corpus.

    candidates[i] is a token sequence or None (scored 0); references[i] is the
    list of reference sequences for item i.  Document frequencies come from
    the reference sets themselves unless precomputed (df, n_docs) are given
    (the SCST reward path reuses training-corpus frequencies); idf uses
    log((N+1)/df) so that a single-item corpus still produces the full score
    of 10 for an exact match (plain log(N/df) degenerates to all-zero vectors
    there).
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references must align")
    if df is None:
        df, n_docs = cider_document_frequencies(references, n)
    elif n_docs is None:
        raise ValueError("precomputed df needs n_docs")

    def tfidf_vec(tokens):
        vecs, norms = [], []
        for k in range(1, n + 1):
            counts = _ngrams(tokens, k)
            vec = {g: c * np.log((n_docs + 1.0) / df.get(g, 1.0))
                   for g, c in counts.items()}
            vecs.append(vec)
            norms.append(np.sqrt(sum(v * v for v in vec.values())))
        return vecs, norms

    scores = np.zeros(len(candidates))
    for i, (cand, refs) in enumerate(zip(candidates, references)):
        if cand is None or len(cand) == 0 or not refs:
            continue
        cvecs, cnorms = tfidf_vec(list(cand))
        acc = np.zeros(n)
        for ref in refs:
            rvecs, rnorms = tfidf_vec(list(ref))
            delta = float(len(cand) - len(ref))
            penalty = np.exp(-delta * delta / (2 * sigma * sigma))
            for k in range(n):
                num = sum(min(cvecs[k].get(g, 0.0), rv) * rv
                          for g, rv in rvecs[k].items())
                if cnorms[k] > 0 and rnorms[k] > 0:
                    acc[k] += penalty * num / (cnorms[k] * rnorms[k])
        scores[i] = 10.0 * float(acc.mean()) / len(refs)
    return scores


# -- BLEU-4 ---------------------------------------------------------------------

def bleu4(candidate, references: list) -> float:
    """Uniform-weight BLEU-4 with clipped precision and brevity penalty.

    Zero modified precisions are floored at 1e-9 (add-epsilon smoothing).
    """
    cand = list(candidate)
    refs = [list(r) for r in references]
    if not cand or not refs:
        return 0.0
    log_p = 0.0
    for k in range(1, 5):
        counts = _ngrams(cand, k)
        max_ref: Counter = Counter()
        for ref in refs:
            rc = _ngrams(ref, k)
            for g, c in rc.items():
                max_ref[g] = max(max_ref[g], c)
        clipped = sum(min(c, max_ref.get(g, 0)) for g, c in counts.items())
        total = max(sum(counts.values()), 1)
        p = clipped / total
        log_p += 0.25 * np.log(max(p, BLEU_EPS))
    c_len = len(cand)
    # closest reference length, ties toward the shorter
    r_len = min((abs(len(r) - c_len), len(r)) for r in refs)[1]
    bp = 1.0 if c_len >= r_len else np.exp(1.0 - r_len / max(c_len, 1))
    return float(bp * np.exp(log_p))


# -- ROUGE-L ---------------------------------------------------------------------

def _lcs_len(a: list, b: list) -> int:
    la, lb = len(a), len(b)
    dp = np.zeros((la + 1, lb + 1), dtype=np.int64)
    for i in range(1, la + 1):
        for j in range(1, lb + 1):
            if a[i - 1] == b[j - 1]:
                dp[i, j] = dp[i - 1, j - 1] + 1
            else:
                dp[i, j] = max(dp[i - 1, j], dp[i, j - 1])
    return int(dp[la, lb])


def rouge_l(candidate, references: list, beta: float = ROUGE_BETA) -> float:
    """LCS F-measure, max over references."""
    cand = list(candidate)
    if not cand:
        return 0.0
    best = 0.0
    for ref in references:
        ref = list(ref)
        if not ref:
            continue
        lcs = _lcs_len(cand, ref)
        if lcs == 0:
            continue
        prec = lcs / len(cand)
        rec = lcs / len(ref)
        f = (1 + beta * beta) * prec * rec / (rec + beta * beta * prec)
        best = max(best, f)
    return best


# -- m@kIoU ---------------------------------------------------------------------

METRIC_FNS = {"cider": None, "bleu4": bleu4, "rouge_l": rouge_l}


def assign_predictions(gt_boxes: np.ndarray, pred_boxes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Best prediction per GT by IoU (ties -> lowest prediction index).

    Returns (indices (G,), ious (G,)); index -1 when there are no predictions.
    """
    g = len(gt_boxes)
    if len(pred_boxes) == 0:
        return np.full(g, -1), np.zeros(g)
    mat = pairwise_iou(np.asarray(gt_boxes), np.asarray(pred_boxes))
    idx = np.argmax(mat, axis=1)
    return idx, mat[np.arange(g), idx]


def m_at_k_iou(scene_items: list[dict], metric: str, k: float) -> float:
    """Caption metric gated on box agreement.

    ``scene_items``: one dict per scene with keys 'gt_boxes' (G,6),
    'gt_captions' (list of reference lists), 'pred_boxes' (P,6),
    'pred_captions' (list of sequences).  Every GT object is assigned its
    max-IoU prediction; the caption score counts only when that IoU >= k.
    CIDEr-D document frequencies span the whole evaluation corpus.
    """
    candidates: list = []
    references: list[list] = []
    for item in scene_items:
        idx, ious = assign_predictions(item["gt_boxes"], item["pred_boxes"])
        for g, (pi, iou) in enumerate(zip(idx, ious)):
            references.append(item["gt_captions"][g])
            if pi >= 0 and iou >= k:
                candidates.append(list(item["pred_captions"][pi]))
            else:
                candidates.append(None)
    if not references:
        return 0.0
    if metric == "cider":
        return float(cider_d(candidates, references).mean())
    fn = METRIC_FNS[metric]
    vals = [fn(c, r) if c is not None else 0.0 for c, r in zip(candidates, references)]
    return float(np.mean(vals))


def dc_recall(scene_items: list[dict], k: float = 0.5) -> float:
    """Fraction of GT objects covered by some prediction at IoU >= k."""
    covered = total = 0
    for item in scene_items:
        _, ious = assign_predictions(item["gt_boxes"], item["pred_boxes"])
        covered += int((ious >= k).sum())
        total += len(ious)
    return covered / total if total else 0.0
