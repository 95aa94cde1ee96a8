"""Greedy dataset-to-worker assignment (largest first, least-loaded worker).

Datasets are sorted by size descending (ties by id) and each goes to the
worker with the smallest current load (ties by lowest index). Workers left
idle when there are fewer datasets than workers receive replicas.
"""

import heapq
import logging
from collections.abc import Sequence

from conveyor_vla.models.plan import AssignmentPlan, BalanceMetrics, DatasetMeta

logger = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 12


def _canonical(datasets: Sequence[DatasetMeta]) -> list[DatasetMeta]:
    return sorted(datasets, key=lambda d: (-d.size, d.id))


def plan_assignment(
    datasets: Sequence[DatasetMeta], num_workers: int, base_seed: int = 0
) -> AssignmentPlan:
    if num_workers < 1:
        raise ValueError("num_workers must be >= 1")
    if not datasets:
        raise ValueError("no datasets to assign")
    ids = [d.id for d in datasets]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate dataset ids: {sorted(ids)}")

    workers: dict[int, list[str]] = {w: [] for w in range(num_workers)}
    heap = [(0.0, w) for w in range(num_workers)]
    for ds in _canonical(datasets):
        load, w = heapq.heappop(heap)
        workers[w].append(ds.id)
        heapq.heappush(heap, (load + ds.size, w))
    loads = {w: load for load, w in heap}
    return AssignmentPlan(
        workers=workers,
        seeds={w: base_seed + w for w in range(num_workers)},
        loads={w: loads[w] for w in range(num_workers)},
        sizes={d.id: d.size for d in datasets},
        base_seed=base_seed,
    )


def replicate_for_idle(
    plan: AssignmentPlan, datasets: Sequence[DatasetMeta], num_workers: int | None = None
) -> AssignmentPlan:
    """Copy datasets onto idle workers until every worker has one.

    Each copy takes the dataset with the fewest replicas (largest first) and
    lands on the least-loaded idle worker. Replicas draw with the seed of the
    worker that hosts them, so they never duplicate another worker's stream.
    """
    num_workers = plan.num_workers if num_workers is None else num_workers
    workers = {w: list(plan.workers.get(w, [])) for w in range(num_workers)}
    loads = {w: plan.loads.get(w, 0.0) for w in range(num_workers)}
    sizes = {d.id: d.size for d in datasets}

    def replicas(ds_id: str) -> int:
        return sum(ds_id in ids for ids in workers.values())

    while True:
        idle = [w for w in range(num_workers) if not workers[w]]
        if not idle:
            break
        target = min(idle, key=lambda w: (loads[w], w))
        chosen = min(_canonical(datasets), key=lambda d: replicas(d.id))
        workers[target].append(chosen.id)
        loads[target] += chosen.size
        logger.debug("Replicated dataset %s onto idle worker %d", chosen.id, target)

    return AssignmentPlan(
        workers=workers,
        seeds={w: plan.base_seed + w for w in range(num_workers)},
        loads=loads,
        sizes=sizes,
        base_seed=plan.base_seed,
    )


def build_plan(
    datasets: Sequence[DatasetMeta], num_workers: int, base_seed: int = 0
) -> AssignmentPlan:
    """Assignment followed by replication onto idle workers."""
    plan = replicate_for_idle(plan_assignment(datasets, num_workers, base_seed), datasets)
    logger.info(
        "LPT plan: %d datasets on %d workers, loads %s",
        len(datasets),
        num_workers,
        {w: round(v, 3) for w, v in plan.loads.items()},
    )
    return plan


def makespan_lower_bound(sizes: Sequence[float], num_workers: int) -> float:
    return max(sum(sizes) / num_workers, max(sizes))


def optimal_makespan(sizes: Sequence[float], num_workers: int) -> float:
    """Exact minimum makespan by depth-first search with pruning."""
    items = sorted(sizes, reverse=True)
    loads = [0.0] * num_workers
    for x in items:
        i = loads.index(min(loads))
        loads[i] += x
    best = max(loads)
    floor = makespan_lower_bound(items, num_workers)
    loads = [0.0] * num_workers

    def dfs(i: int, current: float) -> None:
        nonlocal best
        if best <= floor:
            return
        if i == len(items):
            best = min(best, current)
            return
        seen: set[float] = set()
        for w in range(num_workers):
            old = loads[w]
            if old in seen or old + items[i] >= best:
                continue
            seen.add(old)
            loads[w] = old + items[i]
            dfs(i + 1, max(current, loads[w]))
            loads[w] = old

    dfs(0, 0.0)
    return best


def balance_metrics(plan: AssignmentPlan) -> BalanceMetrics:
    values = [plan.loads[w] for w in sorted(plan.loads)]
    sizes = list(plan.sizes.values())
    if not sizes:
        raise ValueError("plan carries no dataset sizes")
    exact = len(sizes) <= BRUTE_FORCE_LIMIT
    if exact:
        optimum = optimal_makespan(sizes, plan.num_workers)
    else:
        optimum = makespan_lower_bound(sizes, plan.num_workers)
    max_load = max(values)
    return BalanceMetrics(
        max_load=max_load,
        min_load=min(values),
        optimal_makespan=optimum,
        exact=exact,
        makespan_ratio=max_load / optimum,
    )
