"""Tests for polylab.pool (ReplicaPool and thread resolution)."""

from __future__ import annotations

import random
import threading
import time

import pytest

from polylab.pool import THREADS_ENV_VAR, ReplicaPool, resolve_threads


class TestResolveThreads:
    def test_default(self, monkeypatch):
        monkeypatch.delenv(THREADS_ENV_VAR, raising=False)
        assert resolve_threads() == 1
        assert resolve_threads(6) == 6

    def test_env_wins(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV_VAR, "3")
        assert resolve_threads(8) == 3

    def test_env_not_integer(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV_VAR, "many")
        with pytest.raises(ValueError, match=THREADS_ENV_VAR):
            resolve_threads()

    def test_must_be_positive(self, monkeypatch):
        monkeypatch.delenv(THREADS_ENV_VAR, raising=False)
        with pytest.raises(ValueError, match=">= 1"):
            resolve_threads(0)


class TestReplicaPool:
    def test_serial(self):
        assert ReplicaPool().map(lambda r: r * r, range(5)) == [0, 1, 4, 9, 16]

    def test_results_in_replica_order(self):
        rng = random.Random(0)
        delays = {r: rng.random() * 0.02 for r in range(12)}

        def work(r: int) -> int:
            time.sleep(delays[r])
            return r

        assert ReplicaPool(4).map(work, range(12)) == list(range(12))

    def test_uses_several_threads(self):
        seen: set[int] = set()
        barrier = threading.Barrier(2, timeout=5)

        def work(r: int) -> int:
            seen.add(threading.get_ident())
            barrier.wait()
            return r

        assert ReplicaPool(2).map(work, [0, 1]) == [0, 1]
        assert len(seen) == 2

    def test_exception_propagates(self):
        def work(r: int) -> int:
            if r == 3:
                raise RuntimeError("replica 3")
            return r

        with pytest.raises(RuntimeError, match="replica 3"):
            ReplicaPool(2).map(work, range(5))

    def test_empty(self):
        assert ReplicaPool(3).map(lambda r: r, []) == []

    def test_invalid(self):
        with pytest.raises(ValueError):
            ReplicaPool(0)

    def test_repr(self):
        assert repr(ReplicaPool(2)) == "ReplicaPool(threads=2)"
