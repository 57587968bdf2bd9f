"""Deterministic block-parallel execution.

The path range is cut into blocks of a fixed size that does not depend on the
worker count.  Blocks are computed by a forked process pool (or in-process for
one worker) and returned in block order, so every reduction downstream sees
the same arrays whatever the number of workers.
"""
from __future__ import annotations

import multiprocessing as mp
from typing import Callable, Sequence

BLOCK_SIZE = 8192

_TASK: Callable | None = None


def blocks(n_paths: int, block_size: int = BLOCK_SIZE) -> list[tuple[int, int]]:
    """(first_path, count) pairs covering range(n_paths)."""
    return [(s, min(block_size, n_paths - s)) for s in range(0, n_paths, block_size)]


def _run(args):
    return _TASK(*args)


def map_blocks(task: Callable, items: Sequence[tuple], workers: int = 1) -> list:
    """Apply ``task(*item)`` to every item, preserving order."""
    global _TASK
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if workers == 1 or len(items) <= 1:
        return [task(*it) for it in items]
    ctx = mp.get_context("fork")
    _TASK = task
    try:
        with ctx.Pool(min(workers, len(items))) as pool:
            return pool.map(_run, items, chunksize=1)
    finally:
        _TASK = None
