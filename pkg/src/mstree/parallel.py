"""Deterministic chunked execution.

Work is split into chunks whose boundaries depend only on the problem size,
and each chunk draws from its own derived stream.  Results are gathered in
chunk order, so the output does not depend on how many workers ran.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

DEFAULT_CHUNK = 4096
DEFAULT_WORK_BUDGET = 10**8


def work_budget() -> int:
    raw = os.environ.get("MST_WORK_BUDGET")
    return int(float(raw)) if raw else DEFAULT_WORK_BUDGET


def chunk_bounds(total: int, chunk: int):
    return [(lo, min(lo + chunk, total)) for lo in range(0, total, chunk)]


def map_chunks(fn, items, workers: int = 1):
    """``[fn(x) for x in items]``, optionally on a thread pool (numpy and the
    numba kernels release the GIL for the heavy parts)."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))
