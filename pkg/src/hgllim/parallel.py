"""Deterministic chunked parallelism.

Per-sample work is split into fixed-size chunks and the per-chunk results are
combined in chunk order, so the outcome is byte-identical no matter how many
worker threads execute the chunks. Threads (not processes) are enough here:
the heavy kernels are numpy calls that release the GIL.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

CHUNK_SIZE = 4096

T = TypeVar("T")


def resolve_workers(workers: int | None = None) -> int:
    """Turn a worker-count request into a concrete positive integer.

    ``None`` or 0 falls back to the HGLLIM_THREADS environment variable, then
    to the machine CPU count.
    """
    if workers is None or workers <= 0:
        env = os.environ.get("HGLLIM_THREADS", "").strip()
        if env:
            try:
                workers = int(env)
            except ValueError:
                workers = 0
        if workers is None or workers <= 0:
            workers = os.cpu_count() or 1
    return max(1, int(workers))


def chunk_slices(n: int, chunk: int = CHUNK_SIZE) -> list[slice]:
    """Fixed slicing of range(n) into chunks; independent of worker count."""
    return [slice(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]


def map_chunks(fn: Callable[[slice], T], n: int, workers: int = 1,
               chunk: int = CHUNK_SIZE) -> list[T]:
    """Apply ``fn`` to each chunk slice, returning results in chunk order."""
    slices = chunk_slices(n, chunk)
    if workers <= 1 or len(slices) <= 1:
        return [fn(sl) for sl in slices]
    with ThreadPoolExecutor(max_workers=min(workers, len(slices))) as pool:
        return list(pool.map(fn, slices))


def sum_chunks(parts: Sequence) -> object:
    """Sum chunk results elementwise, left to right.

    Supports arrays/scalars and tuples of arrays (summed per position). The
    left-to-right order is what makes the reduction reproducible.
    """
    first = parts[0]
    if isinstance(first, tuple):
        acc = list(first)
        for part in parts[1:]:
            for i, item in enumerate(part):
                acc[i] = acc[i] + item
        return tuple(acc)
    acc = first
    for part in parts[1:]:
        acc = acc + part
    return acc
