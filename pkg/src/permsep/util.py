"""Seeding helpers and the thread-count knob."""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def seed_sequence(*parts: int | str) -> np.random.SeedSequence:
    """Build a SeedSequence from a mix of ints and string tags.

    Strings are hashed so that e.g. ("train", 3) and ("test", 3) give
    unrelated streams.
    """
    entropy: list[int] = []
    for p in parts:
        if isinstance(p, str):
            digest = hashlib.sha256(p.encode("utf-8")).digest()
            entropy.append(int.from_bytes(digest[:8], "little"))
        else:
            entropy.append(int(p) & 0xFFFFFFFFFFFFFFFF)
    return np.random.SeedSequence(entropy)


def rng_for(*parts: int | str) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(*parts))


def thread_count() -> int:
    """Internal parallelism cap, from PERMSEP_THREADS (default 1)."""
    raw = os.environ.get("PERMSEP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def ordered_map(fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    """Map fn over items, preserving order; parallel when PERMSEP_THREADS > 1.

    fn must be a pure function of its item for the result to be
    deterministic regardless of the thread count.
    """
    n = thread_count()
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
