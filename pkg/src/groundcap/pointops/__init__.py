"""Point-set operators: farthest point sampling, ball query, grouped pooling.

Two interchangeable backends exist: numba-compiled kernels (default when
numba imports) and pure numpy.  Set ``GROUNDCAP_NO_NUMBA=1`` to force the
numpy path; ``groundcap benchmark`` compares the two.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import numpy_impl

_DISABLED = os.environ.get("GROUNDCAP_NO_NUMBA", "").lower() in ("1", "true", "yes")
if not _DISABLED:
    try:
        from . import numba_impl as _impl
        BACKEND = "numba"
    except ImportError:
        _impl = numpy_impl
        BACKEND = "numpy"
else:
    _impl = numpy_impl
    BACKEND = "numpy"


def backend_name() -> str:
    return BACKEND


@dataclass
class NeighborGroup:
    """Ball-query result: per-center neighbor indices plus a validity mask.

    Invalid slots are filled (first qualifying index, or the globally nearest
    point for empty balls) so max-pooling over the group never sees garbage.
    """
    indices: np.ndarray    # (n, k) int64 into the source point set
    valid_mask: np.ndarray # (n, k) bool


def fps(points: np.ndarray, n: int, start: int = 0) -> np.ndarray:
    """Greedy max-min farthest point sampling; returns ``n`` unique indices.

    The first pick is ``start``; each later pick maximizes the minimum
    distance to the selected set, ties broken by lowest index.
    """
    points = np.asarray(points, dtype=np.float64)
    m = points.shape[0]
    if not 1 <= n <= m:
        raise ValueError(f"need 1 <= n <= {m}, got n={n}")
    if not 0 <= start < m:
        raise ValueError(f"start index {start} out of range")
    return _impl.fps(points, int(n), int(start))


def ball_query(centers: np.ndarray, points: np.ndarray, k: int,
               radius: float) -> NeighborGroup:
    """Up to ``k`` in-radius neighbors per center, ascending index order."""
    centers = np.asarray(centers, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if radius <= 0:
        raise ValueError("radius must be positive")
    if k < 1:
        raise ValueError("k must be >= 1")
    if points.shape[0] < 1:
        raise ValueError("need at least one source point")
    idx, valid = _impl.ball_query(centers, points, int(k), float(radius))
    return NeighborGroup(indices=idx, valid_mask=valid)


def grouped_max_pool(features: np.ndarray, group: NeighborGroup | np.ndarray) -> np.ndarray:
    """Channelwise max of the features indexed by each group row."""
    indices = group.indices if isinstance(group, NeighborGroup) else np.asarray(group)
    features = np.asarray(features)
    if indices.size and indices.max() >= features.shape[0]:
        raise ValueError("group index out of range")
    return _impl.grouped_max_pool(features, indices.astype(np.int64))


def visual_token_query(cloud_xyz: np.ndarray, source_xyz: np.ndarray,
                       source_feat: np.ndarray, n: int, k: int,
                       radius: float, start: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Parameter-free token resampling to a fixed count.

    Candidate coords come from fps over the raw cloud; each candidate pools
    (max) the source features of its in-radius neighbors.  Returns
    ``(candidates (n,3), pooled features (n,d))``.
    """
    cand_idx = fps(cloud_xyz, n, start=start)
    candidates = np.asarray(cloud_xyz, dtype=np.float64)[cand_idx]
    group = ball_query(candidates, source_xyz, k, radius)
    pooled = grouped_max_pool(source_feat, group)
    return candidates, pooled
