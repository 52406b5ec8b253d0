"""Shared plumbing: RNG handling, chunked parallel maps, float formatting."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np

SeedLike = "int | np.random.Generator | np.random.SeedSequence | None"


def as_rng(seed) -> np.random.Generator:
    """Coerce an int seed, SeedSequence, Generator, or None to a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def chunk_rng(seed: int, chunk_index: int) -> np.random.Generator:
    """Independent stream for one work chunk, derived from (seed, chunk_index).

    Chunk boundaries are fixed by the caller, so results do not depend on
    how many workers consume the chunks.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chunk_index)]))


def map_chunks(fn: Callable, args_list: Sequence, threads: int = 1) -> list:
    """Apply ``fn`` to each element of ``args_list``, optionally in worker processes.

    Results come back in submission order regardless of ``threads``, so any
    downstream reduction is deterministic.
    """
    if threads is None or threads <= 1 or len(args_list) <= 1:
        return [fn(a) for a in args_list]
    with ProcessPoolExecutor(max_workers=int(threads)) as pool:
        return list(pool.map(fn, args_list))


def fmt_raw(x: float) -> str:
    """Shortest float text that parses back to exactly the same value."""
    return repr(float(x))


def fmt_human(x: float) -> str:
    """Short float for console summaries (4 significant digits)."""
    return format(float(x), ".4g")


def clamp_variance(value: float) -> float:
    """Zero out round-off negatives from positive semidefinite quadratic forms."""
    v = float(value)
    return 0.0 if v < 0.0 else v
