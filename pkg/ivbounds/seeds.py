"""
Seed streams and the worker pool.

Every randomized step draws from its own stream. A stream is keyed by
``hash64(global_seed, command, index, label)`` and realized as a
counter-based Philox generator, so streams are independent of each
other and of the order in which tasks run.
"""

from concurrent.futures import ThreadPoolExecutor
from hashlib import blake2b
from logging import getLogger

import numpy as np

LOG = getLogger("Seeds")


def hash64(*parts) -> int:
    h = blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def derive_seed(global_seed: int, command: str, index: int, label: str) -> int:
    return hash64(int(global_seed), command, int(index), label)


def generator(seed: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=hash64(int(seed), *labels)))


def run_tasks(fn, tasks, workers=1):
    """Apply ``fn`` to every task, returning results in task order."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]

    LOG.debug(f"running {len(tasks)} tasks on {workers} workers")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, task) for task in tasks]
        results = []
        for i, future in enumerate(futures):
            try:
                results.append(future.result())
            except Exception:
                LOG.exception(f"task {i} failed")
                raise
    return results
