"""Central finite-difference oracle for analytic gradients."""

import logging
from collections.abc import Callable, Iterable, Mapping

import numpy as np

from conveyor_vla.errors import NonFiniteError
from conveyor_vla.numerics.tensor import GradTape, Tensor

logger = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-8


def _scalar(value: Tensor | float) -> float:
    out = value.item() if isinstance(value, Tensor) else float(value)
    if not np.isfinite(out):
        raise NonFiniteError(f"objective returned {out}")
    return out


def _analytic(f: Callable[[], Tensor], params: Iterable[Tensor]) -> dict[int, np.ndarray]:
    with GradTape() as tape:
        loss = f()
    _scalar(loss)
    grads = tape.backward(loss)
    return {p.id: grads[p.id].data if p.id in grads else np.zeros_like(p.data) for p in params}


def _compare(
    f: Callable[[], Tensor],
    param: Tensor,
    analytic: np.ndarray,
    h: float,
    coords: Iterable[int],
) -> float:
    base = param.data
    worst = 0.0
    try:
        for i in coords:
            bumped = base.copy()
            bumped.flat[i] += h
            param.data = bumped
            f_plus = _scalar(f())
            bumped = base.copy()
            bumped.flat[i] -= h
            param.data = bumped
            f_minus = _scalar(f())
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(float(analytic.flat[i]) - numeric) / (abs(numeric) + DENOMINATOR_FLOOR)
            worst = max(worst, err)
    finally:
        param.data = base
    return worst


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    params: Tensor,
    h: float = 1e-5,
    coords: Iterable[int] | None = None,
) -> float:
    """Max relative error between the tape gradient of f(params) and central differences."""
    if h <= 0:
        raise ValueError("h must be positive")
    if not params.requires_grad:
        raise ValueError("params must require gradients")
    objective = lambda: f(params)  # noqa: E731
    analytic = _analytic(objective, [params])[params.id]
    coords = range(params.size) if coords is None else coords
    return _compare(objective, params, analytic, h, coords)


def check_gradients(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    coords_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Per-tensor max relative error for a closure over many parameters.

    With `coords_per_tensor`, each tensor is probed at that many random
    coordinates instead of exhaustively.
    """
    rng = rng or np.random.default_rng(0)
    analytic = _analytic(f, params.values())
    report: dict[str, float] = {}
    for name, p in params.items():
        if coords_per_tensor is None or coords_per_tensor >= p.size:
            coords = range(p.size)
        else:
            coords = rng.choice(p.size, size=coords_per_tensor, replace=False)
        report[name] = _compare(f, p, analytic[p.id], h, coords)
    worst = max(report, key=report.get, default=None)
    if worst is not None:
        logger.debug("gradient check worst tensor %s: %.3e", worst, report[worst])
    return report
