"""Order-preserving process pool for independent simulation jobs."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

WORKERS_ENV = "IA_TIMING_WORKERS"


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return 1


def run_jobs(fn, jobs, workers=None, progress=None):
    """Apply ``fn`` to each job tuple; results come back in job order.

    ``workers`` only changes wall time, never results: each job carries its own
    RNG key.
    """
    jobs = list(jobs)
    workers = default_workers() if workers is None else max(1, int(workers))
    out = []
    if workers == 1 or len(jobs) <= 1:
        for i, job in enumerate(jobs):
            out.append(fn(*job))
            if progress:
                progress(i + 1, len(jobs))
        return out
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        for i, res in enumerate(pool.map(fn, *zip(*jobs))):
            out.append(res)
            if progress:
                progress(i + 1, len(jobs))
    return out
