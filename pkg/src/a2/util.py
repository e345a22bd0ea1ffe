"""Small shared helpers for the CLI harness."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    """Worker cap from A2_THREADS; defaults to a single worker."""
    raw = os.environ.get("A2_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 1
    return max(1, n)


def parallel_map(fn, items):
    """Order-preserving map, threaded when A2_THREADS allows.

    Results are reduced in input order regardless of completion order, so
    floating-point reductions stay deterministic.
    """
    n = worker_count()
    items = list(items)
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
