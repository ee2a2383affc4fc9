"""Data-parallel map over independent work items.

Each item is computed in isolation (no cross-item reductions), so results
are bit-identical to the sequential path regardless of worker count. The
VCT_THREADS environment variable caps the number of workers; the default
of 1 means plain sequential execution.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    try:
        n = int(os.environ.get("VCT_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


def pmap(fn, items, workers: int | None = None) -> list:
    """Map fn over items, preserving order. workers=None reads VCT_THREADS."""
    items = list(items)
    if workers is None:
        workers = worker_count()
    workers = min(workers, len(items)) if items else 1
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
