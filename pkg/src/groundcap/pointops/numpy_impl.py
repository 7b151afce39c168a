"""Pure-numpy reference implementations of the point-set kernels.

These are the fallback path; the numba twins in ``numba_impl`` must agree
bit-for-bit on indices and masks.
"""

from __future__ import annotations

import numpy as np


def fps(points: np.ndarray, n: int, start: int = 0) -> np.ndarray:
    """Greedy farthest point sampling.

    Picks ``start`` first, then repeatedly the point maximizing the minimum
    squared distance to the selected set; ties resolve to the lowest index.
    Already-selected points are never re-picked even for duplicate coords.
    """
    m = points.shape[0]
    out = np.empty(n, dtype=np.int64)
    out[0] = start
    selected = np.zeros(m, dtype=bool)
    selected[start] = True
    mindist = ((points - points[start]) ** 2).sum(axis=1)
    for i in range(1, n):
        cand = np.where(selected, -1.0, mindist)
        nxt = int(np.argmax(cand))
        out[i] = nxt
        selected[nxt] = True
        d = ((points - points[nxt]) ** 2).sum(axis=1)
        np.minimum(mindist, d, out=mindist)
    return out


def ball_query(centers: np.ndarray, points: np.ndarray, k: int,
               radius: float) -> tuple[np.ndarray, np.ndarray]:
    """First ``k`` in-radius point indices per center, ascending index order.

    Partial balls repeat their first qualifying index in the leftover slots
    (mask False there); empty balls hold the globally nearest index with an
    all-False mask.
    """
    d2 = ((centers[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    qual = d2 <= radius * radius
    # stable sort on the negated mask puts qualifying columns first, in
    # ascending index order
    take = min(k, points.shape[0])
    order = np.argsort(~qual, axis=1, kind="stable")[:, :take]
    if take < k:
        order = np.concatenate(
            [order, np.repeat(order[:, :1], k - take, axis=1)], axis=1)
    counts = qual.sum(axis=1)
    idx = order.astype(np.int64)
    slot = np.arange(k)[None, :]
    valid = slot < counts[:, None]
    first = idx[:, 0].copy()
    idx = np.where(valid, idx, first[:, None])
    empty = counts == 0
    if np.any(empty):
        nearest = np.argmin(d2[empty], axis=1).astype(np.int64)
        idx[empty] = nearest[:, None]
    return idx, valid


def grouped_max_pool(features: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Per-group channelwise max of ``features`` rows."""
    return features[indices].max(axis=1)
