"""Order-preserving parallel map for independent training jobs.

Large shared inputs (datasets) are handed to workers by ``fork`` inheritance
instead of pickling. Results come back in input order, and every job carries
its own seed, so ``jobs=N`` reproduces ``jobs=1`` exactly.
"""

import multiprocessing
from concurrent.futures import ProcessPoolExecutor

_SHARED = None


def _call(args):
    fn, item = args
    return fn(_SHARED, item)


def pmap(fn, items, jobs=1, shared=None):
    """``[fn(shared, item) for item in items]``, optionally across processes."""
    global _SHARED
    items = list(items)
    if jobs <= 1 or len(items) <= 1 or "fork" not in multiprocessing.get_all_start_methods():
        return [fn(shared, item) for item in items]
    _SHARED = shared
    try:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=min(jobs, len(items)), mp_context=ctx) as pool:
            return list(pool.map(_call, [(fn, item) for item in items]))
    finally:
        _SHARED = None
