"""Worker-count control for internally parallel loops.

CAPESKIT_THREADS caps the pool; unset means sequential. Parallel loops
in this package only run seeded pure functions and aggregate results in
input order, so outputs are identical at any worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from .errors import CapeskitError


def worker_count() -> int:
    raw = os.environ.get("CAPESKIT_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise CapeskitError(f"CAPESKIT_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def map_ordered(fn, items):
    """Apply fn to items, preserving order; threaded when allowed."""
    items = list(items)
    workers = worker_count()
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
