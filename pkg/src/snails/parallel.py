"""Deterministic fan-out of independent runs.

Every task carries its own run index, and the run's randomness is derived
from ``(master_seed, run index)`` alone, so results do not depend on the
number of workers or on scheduling. Output order is restored by index.
"""
from __future__ import annotations

import multiprocessing as mp


def map_ordered(fn, tasks, workers: int = 1, chunksize: int | None = None) -> list:
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    if chunksize is None:
        chunksize = max(1, len(tasks) // (8 * workers))
    ctx = mp.get_context("fork")
    with ctx.Pool(workers) as pool:
        return list(pool.imap(fn, tasks, chunksize=chunksize))
