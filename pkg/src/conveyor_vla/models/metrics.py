"""Training and evaluation records."""

import csv
from pathlib import Path

from pydantic import BaseModel, Field

STEP_COLUMNS = ("step", "l_gen", "l_action", "l_total", "grad_norm", "lr")
EVAL_COLUMNS = ("step", "success_rate", "foresight_pixel_error", "wall_time")


class StepMetrics(BaseModel):
    step: int
    l_gen: float
    l_action: float
    l_total: float
    grad_norm: float
    lr: float


class EvalMetrics(BaseModel):
    step: int
    success_rate: float
    foresight_pixel_error: float | None = None
    wall_time: float


class MetricsLog:
    """Append-only metric rows, flushed as CSV."""

    def __init__(self) -> None:
        self._steps: list[StepMetrics] = []
        self._evals: list[EvalMetrics] = []

    @property
    def steps(self) -> tuple[StepMetrics, ...]:
        return tuple(self._steps)

    @property
    def evals(self) -> tuple[EvalMetrics, ...]:
        return tuple(self._evals)

    def append(self, row: StepMetrics) -> None:
        self._steps.append(row)

    def append_eval(self, row: EvalMetrics) -> None:
        self._evals.append(row)

    def loss_curve(self) -> list[float]:
        return [row.l_total for row in self._steps]

    def flush(self, path: Path, eval_path: Path | None = None) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        _write_rows(path, STEP_COLUMNS, [r.model_dump() for r in self._steps])
        if eval_path is not None:
            _write_rows(eval_path, EVAL_COLUMNS, [r.model_dump() for r in self._evals])


def _write_rows(path: Path, columns: tuple[str, ...], rows: list[dict]) -> None:
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: "" if row[c] is None else repr(row[c]) for c in columns})


class EpisodeOutcome(BaseModel):
    """Closed-loop rollout result."""

    tier: str
    setting: int
    seed: int
    success: bool
    steps: int
    target_lost: bool = False
    foresight_error: float | None = Field(
        default=None, description="Mean pixel error of the decoded foresight prediction"
    )
    persistence_error: float | None = Field(default=None, description="Copy-current-frame baseline")
    trajectory: list[tuple[float, float, float]] = Field(default_factory=list)


class TierSummary(BaseModel):
    tier: str
    rollouts: int
    success_rate: float
    mean_steps: float
    foresight_error: float | None = None
    persistence_error: float | None = None
    foresight_beats_persistence: float | None = Field(
        default=None, description="Fraction of rollouts where foresight beats the baseline"
    )


class SuiteSummary(BaseModel):
    checkpoint: str
    euler_steps: int
    settings_per_tier: int
    tiers: list[TierSummary]
    overall_success_rate: float


class AblationReport(BaseModel):
    """Evaluated variants of one ablation study and the margins between them."""

    variants: dict[str, SuiteSummary] = Field(..., description="full, from_scratch, no_foresight")
    euler_sweep: dict[int, SuiteSummary] = Field(
        default_factory=dict, description="Full model per Euler step count"
    )
    checkpoints: dict[str, str] = Field(default_factory=dict)
    pretrain_gain: float
    foresight_gain: float
    slow_success: float
    foresight_wins: float | None = None
    euler_gap: float
    checks: dict[str, bool]
    wall_time: float

    @property
    def passed(self) -> bool:
        return all(self.checks.values())
