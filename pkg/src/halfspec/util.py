"""Shared helpers: deterministic RNG streams and an ordered thread map."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for a derived stream, independent of scheduling order.

    The stream is keyed purely by (seed, key), so any worker may draw from
    it at any time and results do not depend on thread interleaving.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def derived_seed(seed: int, *key: int) -> int:
    """Collapse (seed, key) into a single integer usable as a new master seed."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """map() preserving order; uses a thread pool when threads > 1.

    Results are identical for any thread count as long as fn is pure or
    draws only from stream_rng-style keyed generators.
    """
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
