"""Deterministic block-parallel Monte Carlo.

Replicates are grouped in blocks of ``BLOCK``; block ``b`` always draws from
the stream ``SeedSequence(seed, spawn_key=(b,))``. Results are concatenated
in block order, so the output is identical for any number of workers.
"""

from __future__ import annotations

import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np

from .models import BLOCK, block_rng

_JOB: Callable | None = None


def _run_block(args):
    b, n, seed = args
    return _JOB(b, n, block_rng(seed, b))


def _blocks(n_reps: int):
    nb = -(-n_reps // BLOCK)
    return [(b, min(BLOCK, n_reps - b * BLOCK)) for b in range(nb)]


def run_blocks(job: Callable, n_reps: int, seed: int, workers: int = 1):
    """Evaluate ``job(block_index, n, rng)`` over all blocks.

    ``job`` returns a tuple of arrays with a leading replicate axis (or a
    single array); the per-block results are concatenated along that axis.
    Closures are passed to workers by fork inheritance, never pickled.
    """
    global _JOB
    blocks = _blocks(n_reps)
    if workers is None or workers < 1:
        workers = os.cpu_count() or 1
    if workers == 1 or len(blocks) == 1 or "fork" not in mp.get_all_start_methods():
        results = [job(b, n, block_rng(seed, b)) for b, n in blocks]
    else:
        _JOB = job
        try:
            ctx = mp.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
                results = list(ex.map(_run_block, [(b, n, seed) for b, n in blocks]))
        finally:
            _JOB = None
    if isinstance(results[0], tuple):
        return tuple(np.concatenate([r[i] for r in results]) for i in range(len(results[0])))
    return np.concatenate(results)
