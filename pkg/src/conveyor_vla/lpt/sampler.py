"""Mixture-weighted episode sampling and a data-throughput simulator."""

import logging
from collections.abc import Iterator, Mapping

import numpy as np

from conveyor_vla.errors import EmptyPoolError
from conveyor_vla.models.plan import AssignmentPlan, ThroughputReport

logger = logging.getLogger(__name__)

DRAW_BLOCK = 4096


def normalize_weights(weights: Mapping[str, float], ids: list[str]) -> np.ndarray:
    """Weights of `ids` rescaled to sum to 1; missing ids weigh 0."""
    w = np.array([float(weights.get(i, 0.0)) for i in ids])
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError(f"sampling weights must be finite and nonnegative: {dict(zip(ids, w))}")
    total = w.sum()
    if total <= 0:
        raise EmptyPoolError(f"no positive sampling weight among {ids}")
    return w / total


def worker_pools(
    plan: AssignmentPlan, worker: int, episode_counts: Mapping[str, int]
) -> dict[str, int]:
    """Episode counts of the datasets hosted by `worker`."""
    return {ds: int(episode_counts[ds]) for ds in plan.workers[worker]}


def mixture_sampler(
    pools: Mapping[str, int],
    weights: Mapping[str, float] | None,
    rng: np.random.Generator,
) -> Iterator[tuple[str, int]]:
    """Endless (dataset id, episode index) draws from one worker's local pools.

    A dataset is picked with its weight renormalized over the local pools, then
    an episode uniformly from that dataset.
    """
    ids = sorted(pools)
    if not ids:
        raise EmptyPoolError("worker hosts no datasets")
    p = normalize_weights(weights if weights is not None else dict.fromkeys(ids, 1.0), ids)
    for ds, prob in zip(ids, p, strict=True):
        if prob > 0 and pools[ds] <= 0:
            raise EmptyPoolError(f"dataset {ds} has weight {prob:.3f} but no episodes")
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    sizes = np.array([max(pools[i], 1) for i in ids])
    while True:
        picks = np.searchsorted(cdf, rng.random(DRAW_BLOCK), side="right")
        episodes = (rng.random(DRAW_BLOCK) * sizes[picks]).astype(np.int64)
        for k, e in zip(picks.tolist(), episodes.tolist(), strict=True):
            yield ids[k], e


def simulate_throughput(
    plan: AssignmentPlan,
    steps: int,
    weights: Mapping[str, float] | None = None,
    seed: int = 0,
) -> ThroughputReport:
    """Every worker with data delivers one frame per step from its local mixture.

    Compares the resulting per-dataset frequencies with the global target
    proportions (normalized `weights`, uniform when omitted), and the frames
    of each of the K workers with the equal-rate mean. An idle worker counts
    as a full deviation of 1.0.
    """
    all_ids = sorted(plan.sizes or {d for ids in plan.workers.values() for d in ids})
    weights = dict(weights) if weights is not None else dict.fromkeys(all_ids, 1.0)
    target = dict(zip(all_ids, normalize_weights(weights, all_ids).tolist(), strict=True))

    counts = dict.fromkeys(all_ids, 0)
    worker_frames: dict[int, int] = {}
    for w in sorted(plan.workers):
        local = sorted(plan.workers[w])
        if not local or steps <= 0:
            worker_frames[w] = 0
            continue
        rng = np.random.default_rng(plan.seeds.get(w, plan.base_seed + w) + seed)
        draws = rng.multinomial(steps, normalize_weights(weights, local))
        for ds, n in zip(local, draws.tolist(), strict=True):
            counts[ds] += n
        worker_frames[w] = steps

    total = sum(counts.values())
    frequency = {ds: (n / total if total else 0.0) for ds, n in counts.items()}
    dataset_dev = worker_dev = 0.0
    if total:
        dataset_dev = max(
            abs(frequency[ds] - target[ds]) / target[ds] for ds in all_ids if target[ds] > 0
        )
        mean_frames = total / len(worker_frames)
        worker_dev = max(abs(n - mean_frames) / mean_frames for n in worker_frames.values())
    return ThroughputReport(
        steps=steps,
        worker_frames=worker_frames,
        dataset_frequency=frequency,
        target_proportion=target,
        dataset_deviation=dataset_dev,
        worker_deviation=worker_dev,
        max_deviation=max(dataset_dev, worker_dev),
    )
