"""Worker-pool helpers with a fixed, schedule-independent merge order."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def chunk_bounds(n: int, workers: int) -> list[tuple[int, int]]:
    workers = max(1, min(int(workers), max(n, 1)))
    edges = np.linspace(0, n, workers + 1).astype(np.int64)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def map_chunks(fn, n: int, workers: int = 1) -> list:
    """Call ``fn(start, stop)`` on contiguous chunks; results come back in chunk order."""
    bounds = chunk_bounds(n, workers)
    if len(bounds) == 1:
        return [fn(*bounds[0])]
    with ThreadPoolExecutor(max_workers=len(bounds)) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))


def bincount(index: np.ndarray, weights: np.ndarray | None, size: int, workers: int = 1) -> np.ndarray:
    """``np.bincount`` split across workers, partial sums added in chunk order."""
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)

    def part(a, b):
        w = None if weights is None else weights[a:b]
        return np.bincount(index[a:b], weights=w, minlength=size)

    parts = map_chunks(part, len(index), workers)
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total
