"""Deterministic column-chunked execution over a thread pool."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

# Chunk boundaries depend only on this size, never on the worker count, so
# every thread count performs the same floating-point operations.
CHUNK_COLUMNS = 1024


def default_threads() -> int:
    value = os.environ.get("SL0SR_THREADS", "")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def map_columns(fn, X, threads: int = 1, chunk: int = CHUNK_COLUMNS) -> np.ndarray:
    """Apply ``fn`` to fixed-size column blocks of ``X`` and stack the results."""
    X = np.asarray(X)
    n = X.shape[1]
    if n == 0:
        return fn(X)
    blocks = [X[:, i:i + chunk] for i in range(0, n, chunk)]
    if threads <= 1 or len(blocks) == 1:
        parts = [fn(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, blocks))
    return np.concatenate(parts, axis=1)
