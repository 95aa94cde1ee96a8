"""Load-balanced dataset sharding for parallel data loading."""

from conveyor_vla.lpt.planner import (
    balance_metrics,
    build_plan,
    makespan_lower_bound,
    optimal_makespan,
    plan_assignment,
    replicate_for_idle,
)
from conveyor_vla.lpt.sampler import (
    mixture_sampler,
    normalize_weights,
    simulate_throughput,
    worker_pools,
)
from conveyor_vla.lpt.workers import ShardedLoader

__all__ = [
    "ShardedLoader",
    "balance_metrics",
    "build_plan",
    "makespan_lower_bound",
    "mixture_sampler",
    "normalize_weights",
    "optimal_makespan",
    "plan_assignment",
    "replicate_for_idle",
    "simulate_throughput",
    "worker_pools",
]
