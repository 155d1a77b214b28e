"""Deterministic replicate fan-out.

Work is split into contiguous index chunks and results are reassembled in
index order, so the output never depends on the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")

__all__ = ["replicate_map", "resolve_workers"]


def resolve_workers(workers: int | None) -> int:
    if workers is None or workers <= 0:
        return os.cpu_count() or 1
    return int(workers)


def _run_chunk(fn: Callable[[int], T], indices: Sequence[int]) -> list[T]:
    return [fn(i) for i in indices]


def replicate_map(fn: Callable[[int], T], n: int, workers: int | None = 1, chunks_per_worker: int = 4) -> list[T]:
    """``[fn(0), ..., fn(n-1)]`` computed on up to ``workers`` processes.

    ``fn`` must be picklable (a module-level function or a
    ``functools.partial`` of one) when more than one worker is used.
    """
    workers = resolve_workers(workers)
    if workers == 1 or n <= 1:
        return [fn(i) for i in range(n)]
    n_chunks = min(n, workers * chunks_per_worker)
    bounds = [round(j * n / n_chunks) for j in range(n_chunks + 1)]
    pieces = [range(bounds[j], bounds[j + 1]) for j in range(n_chunks)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_chunk, fn, list(p)) for p in pieces]
        out: list[T] = []
        for f in futures:
            out.extend(f.result())
    return out
