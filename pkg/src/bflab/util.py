"""Seeded RNG substreams, small statistics helpers, worker pool sizing."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

_MASK64 = (1 << 64) - 1

T = TypeVar("T")
R = TypeVar("R")


def stream(seed: int, *key: int) -> np.random.SeedSequence:
    """Derive a named RNG stream from a 64-bit seed and an index path.

    Streams with different key paths are statistically independent, and the
    derivation is pure: the same (seed, key) always yields the same stream,
    regardless of call order. This is what makes parallel Monte Carlo
    schedules reproducible.
    """
    return np.random.SeedSequence(seed & _MASK64, spawn_key=tuple(int(k) for k in key))


def substream(parent: np.random.SeedSequence, *key: int) -> np.random.SeedSequence:
    """Child stream of `parent` at the given index path (pure, no state)."""
    return np.random.SeedSequence(
        entropy=parent.entropy,
        spawn_key=tuple(parent.spawn_key) + tuple(int(k) for k in key),
    )


def generator(ss: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(ss))


def rng_from(seed: int, *key: int) -> np.random.Generator:
    return generator(stream(seed, *key))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0.0 if either vector is exactly zero."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def mean_se(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and its standard error (ddof=1; se=0 for n<2)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("mean_se of empty sequence")
    m = float(arr.mean())
    if arr.size < 2:
        return m, 0.0
    return m, float(arr.std(ddof=1) / np.sqrt(arr.size))


def worker_count() -> int:
    """Number of parallel workers; the BF_THREADS env var caps it.

    Defaults to 1 (fully serial) when BF_THREADS is unset so runs are never
    implicitly concurrent.
    """
    raw = os.environ.get("BF_THREADS", "")
    if not raw:
        return 1
    try:
        cap = int(raw)
    except ValueError:
        return 1
    return max(1, min(cap, os.cpu_count() or 1))


def parallel_map(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """Order-preserving map, fanned out over worker_count() threads.

    Safe for any per-item work that derives its randomness from index-keyed
    substreams: results are identical at any worker count.
    """
    seq = list(items)
    n = worker_count()
    if n <= 1 or len(seq) <= 1:
        return [fn(it) for it in seq]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, seq))
