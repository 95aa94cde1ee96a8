"""FastAPI application - policy inference, LPT planning and mask inspection."""

import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import ValidationError

from conveyor_vla.config import get_settings
from conveyor_vla.errors import ConveyorVLAError
from conveyor_vla.lpt import balance_metrics, build_plan
from conveyor_vla.masking import build_blockwise_mask, format_mask
from conveyor_vla.models.api import (
    ActRequest,
    ActResponse,
    HealthResponse,
    PlanRequest,
    PlanResponse,
)
from conveyor_vla.models.layout import SegmentLayout
from conveyor_vla.services.policy_service import PolicyService

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
)
logger = logging.getLogger(__name__)

# Created at startup when a checkpoint is configured
_service: PolicyService | None = None


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Load the configured checkpoint, if any."""
    global _service
    settings = get_settings()
    if settings.checkpoint_path is not None:
        try:
            _service = PolicyService.from_checkpoint(settings.checkpoint_path)
        except (OSError, ConveyorVLAError) as e:
            logger.error("Could not load checkpoint %s: %s", settings.checkpoint_path, e)
    else:
        logger.warning("No checkpoint configured; /act is unavailable")
    yield
    _service = None


app = FastAPI(
    title="Conveyor VLA",
    description="Foresight-augmented vision-language-action policy for conveyor pick-and-place",
    version="0.1.0",
    lifespan=lifespan,
)


def set_service(service: PolicyService | None) -> None:
    """Swap the served policy (tests and embedding applications)."""
    global _service
    _service = service


@app.exception_handler(ConveyorVLAError)
async def domain_error(request: Request, exc: ConveyorVLAError) -> JSONResponse:
    logger.warning("%s on %s: %s", type(exc).__name__, request.url.path, exc)
    return JSONResponse(status_code=422, content={"detail": str(exc), "error": type(exc).__name__})


@app.get("/health")
async def health() -> HealthResponse:
    """Health check for load balancers."""
    return HealthResponse(checkpoint=_service.name if _service else None)


@app.post("/act")
def act(request: ActRequest) -> ActResponse:
    """One action chunk for one observation."""
    if _service is None:
        raise HTTPException(status_code=503, detail="no checkpoint loaded")
    return _service.act(request)


@app.post("/lpt/plan")
async def lpt_plan(request: PlanRequest) -> PlanResponse:
    """Worker assignment for a dataset mixture."""
    if not request.datasets:
        raise HTTPException(status_code=422, detail="no datasets")
    try:
        plan = build_plan(request.datasets, request.workers, base_seed=request.seed)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e)) from e
    metrics = balance_metrics(plan)
    return PlanResponse(plan=plan, max_load=metrics.max_load, min_load=metrics.min_load)


@app.get("/mask")
async def mask(
    prefix: int = Query(..., ge=1),
    gen: int = Query(0, ge=0),
    state: int = Query(1, ge=1),
    action: int = Query(..., ge=1),
) -> PlainTextResponse:
    """Blockwise attention mask as rows of 0/1."""
    try:
        layout = SegmentLayout(n_prefix=prefix, n_gen=gen, n_state=state, n_action=action)
    except ValidationError as e:
        raise HTTPException(status_code=422, detail=str(e)) from e
    return PlainTextResponse(format_mask(build_blockwise_mask(layout)) + "\n")
