"""Request and response bodies of the policy server."""

from pydantic import BaseModel, Field

from conveyor_vla.models.plan import AssignmentPlan, DatasetMeta


class ActRequest(BaseModel):
    """One observation; views are (n_views, H, W) in [0, 1]."""

    instruction: list[int] | str = Field(..., description="Token ids or instruction text")
    views: list[list[list[float]]]
    history_views: list[list[list[float]]] | None = Field(
        default=None, description="Views m steps back; the current views when omitted"
    )
    proprio: list[float]
    seed: int = 0
    euler_steps: int | None = Field(default=None, ge=1)


class ActResponse(BaseModel):
    chunk: list[list[float]] = Field(..., description="k x 3 actions in environment units")
    euler_steps: int


class PlanRequest(BaseModel):
    datasets: list[DatasetMeta]
    workers: int = Field(..., ge=1)
    seed: int = 0


class PlanResponse(BaseModel):
    plan: AssignmentPlan
    max_load: float
    min_load: float


class HealthResponse(BaseModel):
    status: str = "ok"
    checkpoint: str | None = None
