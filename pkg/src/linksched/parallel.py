"""Optional thread parallelism, capped by the LINKSCHED_THREADS variable."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence


def max_workers() -> int:
    """Worker cap from the environment; defaults to serial execution."""
    raw = os.environ.get("LINKSCHED_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items: Sequence) -> list:
    """Order-preserving map; results never depend on scheduling order."""
    workers = max_workers()
    if workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
