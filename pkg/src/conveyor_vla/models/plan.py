"""Dataset-to-worker assignment records."""

from pydantic import BaseModel, Field


class DatasetMeta(BaseModel):
    """Lightweight description of one training dataset."""

    id: str
    size: float = Field(..., gt=0, description="Size proxy (frame count)")
    path: str = ""
    sampling_weight: float = Field(default=1.0, ge=0)


class AssignmentPlan(BaseModel):
    """Mapping of workers to datasets, with seeds and loads."""

    workers: dict[int, list[str]]
    seeds: dict[int, int]
    loads: dict[int, float]
    sizes: dict[str, float] = Field(default_factory=dict, description="Size proxy per dataset id")
    base_seed: int = 0

    @property
    def num_workers(self) -> int:
        return len(self.workers)

    def replicas(self, dataset_id: str) -> int:
        return sum(dataset_id in ids for ids in self.workers.values())

    def idle_workers(self) -> list[int]:
        return [w for w, ids in sorted(self.workers.items()) if not ids]


class BalanceMetrics(BaseModel):
    max_load: float
    min_load: float
    optimal_makespan: float = Field(..., description="Exact for small n, lower bound otherwise")
    exact: bool
    makespan_ratio: float


class ThroughputReport(BaseModel):
    """Outcome of a simulated data-loading run."""

    steps: int
    worker_frames: dict[int, int]
    dataset_frequency: dict[str, float]
    target_proportion: dict[str, float]
    dataset_deviation: float = Field(
        default=0.0, description="Largest relative deviation of a dataset from its target share"
    )
    worker_deviation: float = Field(
        default=0.0, description="Largest relative deviation of a worker from the mean frame rate"
    )
    max_deviation: float = Field(..., description="Larger of the dataset and worker deviations")
