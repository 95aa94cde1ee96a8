"""Data-loading workers that follow an assignment plan.

Each worker thread owns its datasets exclusively, samples from its local
mixture with its own seed and pushes fixed-size sample groups into a private
bounded queue. The trainer takes one group from every worker in index order,
so batches are identical across runs regardless of thread timing.
"""

import logging
import math
import queue
import threading
from collections.abc import Callable, Mapping
from typing import Generic, TypeVar

import numpy as np

from conveyor_vla.lpt.sampler import mixture_sampler, worker_pools
from conveyor_vla.models.plan import AssignmentPlan

logger = logging.getLogger(__name__)

T = TypeVar("T")

SampleFn = Callable[[str, int, np.random.Generator], T]

_POLL_SECONDS = 0.1


class _Failure:
    def __init__(self, error: BaseException) -> None:
        self.error = error


class ShardedLoader(Generic[T]):
    """Batches assembled from per-worker streams.

    With `threaded=False` the same streams are produced inline, which gives
    the same batches without background threads.
    """

    def __init__(
        self,
        plan: AssignmentPlan,
        episode_counts: Mapping[str, int],
        make_sample: SampleFn,
        *,
        batch_size: int,
        weights: Mapping[str, float] | None = None,
        queue_depth: int = 4,
        threaded: bool = True,
    ) -> None:
        self._plan = plan
        self._make_sample = make_sample
        self._batch_size = batch_size
        self._per_worker = math.ceil(batch_size / plan.num_workers)
        self._threaded = threaded
        self._stop = threading.Event()
        self._streams = []
        for w in sorted(plan.workers):
            rng = np.random.default_rng(plan.seeds[w])
            pools = worker_pools(plan, w, episode_counts)
            self._streams.append((w, rng, mixture_sampler(pools, weights, rng)))
        self._queues: list[queue.Queue] = [queue.Queue(maxsize=queue_depth) for _ in self._streams]
        self._threads: list[threading.Thread] = []
        if threaded:
            for i, (w, _, _) in enumerate(self._streams):
                t = threading.Thread(
                    target=self._run, args=(i,), name=f"lpt-worker-{w}", daemon=True
                )
                t.start()
                self._threads.append(t)

    def _group(self, i: int) -> list[T]:
        _, rng, stream = self._streams[i]
        draws = [next(stream) for _ in range(self._per_worker)]
        return [self._make_sample(ds, ep, rng) for ds, ep in draws]

    def _run(self, i: int) -> None:
        q = self._queues[i]
        while not self._stop.is_set():
            try:
                item: list[T] | _Failure = self._group(i)
            except BaseException as exc:  # surfaced to the trainer thread
                logger.exception("Loader worker %d failed", i)
                item = _Failure(exc)
            while not self._stop.is_set():
                try:
                    q.put(item, timeout=_POLL_SECONDS)
                    break
                except queue.Full:
                    continue
            if isinstance(item, _Failure):
                return

    def next_batch(self) -> list[T]:
        samples: list[T] = []
        for i in range(len(self._streams)):
            if not self._threaded:
                samples.extend(self._group(i))
                continue
            item = self._queues[i].get()
            if isinstance(item, _Failure):
                raise item.error
            samples.extend(item)
        return samples[: self._batch_size]

    def close(self) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout=5.0)
        self._threads.clear()

    def __enter__(self) -> "ShardedLoader[T]":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
