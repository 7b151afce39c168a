"""Numba-compiled point-set kernels (the default hot path).

Semantics match ``numpy_impl`` exactly; see that module for the contracts.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _fps_kernel(points, n, start):
    m = points.shape[0]
    out = np.empty(n, dtype=np.int64)
    selected = np.zeros(m, dtype=np.bool_)
    mindist = np.empty(m, dtype=np.float64)
    out[0] = start
    selected[start] = True
    for j in range(m):
        dx = points[j, 0] - points[start, 0]
        dy = points[j, 1] - points[start, 1]
        dz = points[j, 2] - points[start, 2]
        mindist[j] = dx * dx + dy * dy + dz * dz
    for i in range(1, n):
        best = -1
        bestd = -1.0
        for j in range(m):
            if selected[j]:
                continue
            if mindist[j] > bestd:
                bestd = mindist[j]
                best = j
        out[i] = best
        selected[best] = True
        for j in range(m):
            dx = points[j, 0] - points[best, 0]
            dy = points[j, 1] - points[best, 1]
            dz = points[j, 2] - points[best, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < mindist[j]:
                mindist[j] = d
    return out


@njit(cache=True)
def _ball_query_kernel(centers, points, k, radius):
    n = centers.shape[0]
    m = points.shape[0]
    r2 = radius * radius
    idx = np.zeros((n, k), dtype=np.int64)
    valid = np.zeros((n, k), dtype=np.bool_)
    for i in range(n):
        cnt = 0
        for j in range(m):
            dx = centers[i, 0] - points[j, 0]
            dy = centers[i, 1] - points[j, 1]
            dz = centers[i, 2] - points[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d <= r2:
                idx[i, cnt] = j
                valid[i, cnt] = True
                cnt += 1
                if cnt == k:
                    break
        if cnt == 0:
            best = 0
            bestd = np.inf
            for j in range(m):
                dx = centers[i, 0] - points[j, 0]
                dy = centers[i, 1] - points[j, 1]
                dz = centers[i, 2] - points[j, 2]
                d = dx * dx + dy * dy + dz * dz
                if d < bestd:
                    bestd = d
                    best = j
            for t in range(k):
                idx[i, t] = best
        elif cnt < k:
            for t in range(cnt, k):
                idx[i, t] = idx[i, 0]
    return idx, valid


@njit(cache=True)
def _grouped_max_pool_kernel(features, indices):
    n, k = indices.shape
    d = features.shape[1]
    out = np.empty((n, d), dtype=features.dtype)
    for i in range(n):
        for c in range(d):
            best = features[indices[i, 0], c]
            for t in range(1, k):
                v = features[indices[i, t], c]
                if v > best:
                    best = v
            out[i, c] = best
    return out


def fps(points: np.ndarray, n: int, start: int = 0) -> np.ndarray:
    return _fps_kernel(np.ascontiguousarray(points, dtype=np.float64), n, start)


def ball_query(centers: np.ndarray, points: np.ndarray, k: int,
               radius: float) -> tuple[np.ndarray, np.ndarray]:
    return _ball_query_kernel(
        np.ascontiguousarray(centers, dtype=np.float64),
        np.ascontiguousarray(points, dtype=np.float64),
        k, float(radius),
    )


def grouped_max_pool(features: np.ndarray, indices: np.ndarray) -> np.ndarray:
    return _grouped_max_pool_kernel(
        np.ascontiguousarray(features),
        np.ascontiguousarray(indices, dtype=np.int64),
    )
