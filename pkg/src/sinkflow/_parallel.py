"""Thread pool for seed sweeps and particle chunks.

The pool size comes from ``SINKFLOW_NUM_THREADS`` (default: the number of
available CPUs). Results are returned in input order, so outputs do not
depend on scheduling.
"""
import os
from concurrent.futures import ThreadPoolExecutor

ENV_VAR = "SINKFLOW_NUM_THREADS"


def num_threads() -> int:
    raw = os.environ.get(ENV_VAR, "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"{ENV_VAR} must be an integer, got {raw!r}") from None
        if n < 1:
            raise ValueError(f"{ENV_VAR} must be positive")
        return n
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # not on Linux
        return os.cpu_count() or 1


def ordered_map(fn, items):
    items = list(items)
    n = min(num_threads(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
