"""Deterministic batch evaluation of candidate vectors, serial or process-parallel.

Every candidate evaluation owns a private random stream derived from
(master entropy, key tuple), so results are bit-identical regardless of how
many workers run them or in which order tasks are scheduled.
"""

from __future__ import annotations

import multiprocessing as mp
import os

import numpy as np

_WORKER_OBJECTIVE = None


def _init_worker(objective):
    global _WORKER_OBJECTIVE
    _WORKER_OBJECTIVE = objective
    # keep worker BLAS single-threaded; the pool is the parallelism
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
    os.environ.setdefault("OMP_NUM_THREADS", "1")


def _run_one(objective, theta, entropy, key):
    rng = np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=tuple(key)))
    return float(objective(theta, rng))


def _pool_task(args):
    theta, entropy, key = args
    return _run_one(_WORKER_OBJECTIVE, theta, entropy, key)


def resolve_workers(workers: int | None) -> int:
    """CLI fallback chain: explicit value, then BLACKDROPS_WORKERS, then 1."""
    if workers is not None and workers >= 1:
        return int(workers)
    env = os.environ.get("BLACKDROPS_WORKERS", "")
    try:
        val = int(env)
        return val if val >= 1 else 1
    except ValueError:
        return 1


class EvalBackend:
    """Evaluates batches of (theta, stream-key) tasks against one objective.

    With ``workers == 1`` everything runs in-process; otherwise a process pool
    holds a pickled copy of the objective for its lifetime.  Both paths execute
    the identical per-task code, so switching worker counts never changes
    results, only wall time.
    """

    def __init__(self, objective, workers: int = 1):
        self.objective = objective
        self.workers = max(1, int(workers))
        self._pool = None
        if self.workers > 1:
            self._pool = mp.Pool(
                self.workers, initializer=_init_worker, initargs=(objective,)
            )

    def evaluate(self, thetas, entropy: int, keys) -> np.ndarray:
        """Evaluate each row of `thetas` with the stream keyed by `keys[i]`."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if len(keys) != thetas.shape[0]:
            raise ValueError("one stream key per candidate required")
        if self._pool is None:
            vals = [
                _run_one(self.objective, thetas[i], entropy, keys[i])
                for i in range(thetas.shape[0])
            ]
        else:
            tasks = [(thetas[i], entropy, keys[i]) for i in range(thetas.shape[0])]
            chunk = max(1, (len(tasks) + self.workers - 1) // self.workers)
            vals = self._pool.map(_pool_task, tasks, chunksize=chunk)
        return np.asarray(vals, dtype=float)

    def close(self):
        if self._pool is not None:
            self._pool.close()
            self._pool.join()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def run_tasks(fn, args_list, workers: int = 1):
    """Order-preserving map of `fn` over argument tuples, optionally in processes."""
    if workers <= 1 or len(args_list) <= 1:
        return [fn(*a) for a in args_list]
    with mp.Pool(min(workers, len(args_list))) as pool:
        return pool.starmap(fn, args_list)
