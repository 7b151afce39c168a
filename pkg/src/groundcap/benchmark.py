"""Kernel benchmark: numba-compiled point ops against the pure-numpy path."""

from __future__ import annotations

import time

import numpy as np

from .pointops import numpy_impl

SIZES = {"fps": (20000, 1024), "ball_query": (1024, 20000, 16), "grouped_max_pool": (4096, 16, 64)}


def _time(fn, repeats: int = 3) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_benchmark(n_points: int = 20000, repeats: int = 3) -> list[dict]:
    """Time each kernel on both backends; returns one row per kernel."""
    try:
        from .pointops import numba_impl
    except ImportError:
        numba_impl = None

    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 6, size=(n_points, 3))
    centers = pts[:: max(1, n_points // 1024)][:1024].copy()
    feats = rng.normal(size=(n_points, 64))
    group_idx = rng.integers(0, n_points, size=(1024, 16))

    cases = {
        "fps": lambda impl: impl.fps(pts, 1024, 0),
        "ball_query": lambda impl: impl.ball_query(centers, pts, 16, 0.4),
        "grouped_max_pool": lambda impl: impl.grouped_max_pool(feats, group_idx),
    }
    rows = []
    for name, call in cases.items():
        row = {"kernel": name, "numpy_s": _time(lambda: call(numpy_impl), repeats)}
        if numba_impl is not None:
            call(numba_impl)  # compile outside the timer
            row["numba_s"] = _time(lambda: call(numba_impl), repeats)
            row["speedup"] = row["numpy_s"] / row["numba_s"]
        rows.append(row)
    return rows


def format_rows(rows: list[dict]) -> str:
    lines = [f"{'kernel':<18}{'numpy':>10}{'numba':>10}{'speedup':>9}"]
    for r in rows:
        numba = f"{r['numba_s'] * 1e3:.2f}ms" if "numba_s" in r else "n/a"
        speed = f"{r['speedup']:.1f}x" if "speedup" in r else "-"
        lines.append(f"{r['kernel']:<18}{r['numpy_s'] * 1e3:>8.2f}ms{numba:>10}{speed:>9}")
    return "\n".join(lines)
