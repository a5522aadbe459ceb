"""Barrier-phased fork/join over contiguous particle ranges.

Each phase splits ``[0, count)`` into one contiguous block per worker, runs
``body(start, stop)`` for every block and waits for all of them.  Bodies may
only write their own indices; anything else they produce is returned as
per-worker scratch, handed back in worker order so merges are deterministic.
The numba kernels release the GIL, so a thread pool gives real parallelism.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

ENV_WORKERS = "DEM_WORKERS"


class PhaseError(RuntimeError):
    """A phase body failed; ``index`` is the offending particle when known."""

    def __init__(self, message: str, index: int | None = None, worker: int | None = None):
        super().__init__(message)
        self.index = index
        self.worker = worker


class IndexedFailure(RuntimeError):
    """Raised by a body to pin a failure on one particle index."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


def resolve_worker_count(workers: int | None = None) -> int:
    if workers is None:
        env = os.environ.get(ENV_WORKERS)
        if env is not None and env.strip():
            try:
                workers = int(env)
            except ValueError:
                raise ValueError(f"{ENV_WORKERS} must be a positive integer, got {env!r}") from None
        else:
            workers = os.cpu_count() or 1
    workers = int(workers)
    if workers < 1:
        raise ValueError("worker count must be at least 1")
    return workers


def partition(count: int, worker_count: int) -> list[tuple[int, int]]:
    """Contiguous, disjoint ranges covering [0, count); sizes differ by at most one."""
    base, extra = divmod(count, worker_count)
    out, start = [], 0
    for w in range(worker_count):
        stop = start + base + (1 if w < extra else 0)
        out.append((start, stop))
        start = stop
    return out


@dataclass
class ExecutionPlan:
    worker_count: int = 1

    def __post_init__(self):
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")

    def ranges(self, count: int) -> list[tuple[int, int]]:
        return partition(count, self.worker_count)


class ParallelEngine:
    """Owns the worker pool; ``worker_count=1`` runs inline on the caller."""

    def __init__(self, workers: int | None = None):
        self.plan = ExecutionPlan(resolve_worker_count(workers))
        self._pool = None
        if self.plan.worker_count > 1:
            self._pool = ThreadPoolExecutor(max_workers=self.plan.worker_count, thread_name_prefix="dem")

    @property
    def worker_count(self) -> int:
        return self.plan.worker_count

    def parallel_for(self, count: int, body: Callable[[int, int], Any]) -> list[Any]:
        return parallel_for_particles(count, body, self.plan, self._pool)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def parallel_for_particles(
    count: int, body: Callable[[int, int], Any], plan: ExecutionPlan, pool: ThreadPoolExecutor | None = None
) -> list[Any]:
    """Run one phase; returns the scratch of every worker with a non-empty range."""
    ranges = [r for r in plan.ranges(count) if r[1] > r[0]]
    if not ranges:
        return []
    if pool is None or len(ranges) == 1:
        return [_run(body, w, r) for w, r in enumerate(ranges)]
    futures = [pool.submit(_run, body, w, r) for w, r in enumerate(ranges)]
    results, first_error = [], None
    for fut in futures:
        try:
            results.append(fut.result())
        except PhaseError as exc:
            first_error = first_error or exc
    if first_error is not None:
        raise first_error
    return results


def _run(body, worker: int, rng: tuple[int, int]):
    start, stop = rng
    try:
        return body(start, stop)
    except IndexedFailure as exc:
        raise PhaseError(f"worker {worker}: {exc}", index=exc.index, worker=worker) from exc
    except Exception as exc:
        raise PhaseError(
            f"worker {worker} failed on range [{start}, {stop}): {exc}", worker=worker
        ) from exc


@dataclass
class LoadReport:
    histogram: np.ndarray
    worker_loads: np.ndarray
    imbalance: float


def load_histogram(counts, worker_count: int = 1) -> LoadReport:
    """Histogram of per-particle work and max/mean load over the static partition."""
    counts = np.asarray(counts, dtype=np.int64)
    hist = np.bincount(counts) if counts.size else np.zeros(0, dtype=np.int64)
    loads = np.array([counts[a:b].sum() for a, b in partition(counts.size, worker_count)], dtype=np.float64)
    mean = loads.mean() if loads.size else 0.0
    imbalance = float(loads.max() / mean) if mean > 0 else 1.0
    return LoadReport(hist, loads, imbalance)
