"""Bounded worker pool over environment replicas.

Results are always returned in replica order, whatever the completion order,
so every reduction downstream sees the same sequence for any pool size.
"""

from __future__ import annotations

import logging
import os
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import TypeVar

logger = logging.getLogger(__name__)

__all__ = ["ReplicaPool", "THREADS_ENV_VAR", "resolve_threads"]

THREADS_ENV_VAR = "POLYLAB_THREADS"

T = TypeVar("T")


def resolve_threads(requested: int | None = None) -> int:
    """``POLYLAB_THREADS`` if set, else ``requested``, else 1."""
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from None
    else:
        value = requested if requested is not None else 1
    if value < 1:
        raise ValueError(f"thread count must be >= 1, got {value}")
    return value


class ReplicaPool:
    """Run a per-replica function on up to ``threads`` workers.

    numpy releases the GIL inside the lattice kernels, so threads give real
    parallelism for the large array steps.
    """

    def __init__(self, threads: int = 1) -> None:
        if threads < 1:
            raise ValueError(f"threads must be >= 1, got {threads}")
        self.threads = threads

    def map(self, fn: Callable[[int], T], replica_ids: Iterable[int]) -> list[T]:
        ids = list(replica_ids)
        if self.threads == 1 or len(ids) <= 1:
            return [fn(r) for r in ids]

        results: dict[int, T] = {}
        with ThreadPoolExecutor(max_workers=self.threads) as executor:
            futures = {executor.submit(fn, r): r for r in ids}
            for future in as_completed(futures):
                results[futures[future]] = future.result()
        logger.debug("pool: %d replicas on %d threads", len(ids), self.threads)
        return [results[r] for r in ids]

    def __repr__(self) -> str:
        return f"ReplicaPool(threads={self.threads})"
