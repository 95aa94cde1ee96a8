"""Flow matching over action chunks.

Training draws tau ~ Beta(1.5, 1) by inverse CDF, interpolates
a_tau = (1 - tau) * eps + tau * a and regresses the velocity a - eps.
Inference integrates the learned field from noise with K Euler steps.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from conveyor_vla.errors import InvalidDrawError, NonFiniteError, ShapeMismatchError
from conveyor_vla.numerics import Tensor, ops, stop_gradient

logger = logging.getLogger(__name__)

BETA_ALPHA = 1.5

VelocityFn = Callable[[float, np.ndarray], np.ndarray]


def sample_tau(u: float | np.ndarray) -> float | np.ndarray:
    """Inverse CDF of Beta(1.5, 1): the CDF is x**1.5, so tau = u**(2/3)."""
    arr = np.asarray(u, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InvalidDrawError(f"uniform draw outside [0, 1]: {u}")
    tau = arr ** (1.0 / BETA_ALPHA)
    return float(tau) if tau.ndim == 0 else tau


@dataclass(frozen=True)
class FlowSample:
    tau: np.ndarray
    noise: np.ndarray
    a_tau: np.ndarray
    v_target: np.ndarray


def make_flow_sample(
    actions: np.ndarray, rng: np.random.Generator, tau: float | np.ndarray | None = None
) -> FlowSample:
    """One flow draw per chunk; `actions` is (k, d) or (B, k, d)."""
    a = np.asarray(actions, dtype=np.float64)
    if not np.isfinite(a).all():
        raise NonFiniteError("action chunk contains non-finite values")
    batch_shape = a.shape[:-2]
    if tau is None:
        tau = sample_tau(rng.random(batch_shape) if batch_shape else rng.random())
    tau = np.asarray(tau, dtype=np.float64)
    noise = rng.standard_normal(a.shape)
    t = tau.reshape(tau.shape + (1, 1))
    a_tau = (1.0 - t) * noise + t * a
    return FlowSample(tau=tau, noise=noise, a_tau=a_tau, v_target=a - noise)


def action_loss(v_hat: Tensor, sample: FlowSample) -> Tensor:
    """Mean squared error to the flow target a - eps."""
    target = stop_gradient(np.asarray(sample.v_target, dtype=v_hat.dtype))
    if v_hat.shape != target.shape:
        raise ShapeMismatchError(f"velocity {v_hat.shape} vs target {target.shape}")
    return ops.mse(v_hat, target)


def euler_sample(velocity: VelocityFn, noise: np.ndarray, steps: int) -> np.ndarray:
    """Integrate da/dtau = v(tau, a) from a(0) = noise to tau = 1 in `steps` steps."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    a = np.asarray(noise, dtype=np.float64).copy()
    dtau = 1.0 / steps
    for i in range(steps):
        tau = i * dtau
        v = np.asarray(velocity(tau, a), dtype=np.float64)
        if v.shape != a.shape:
            raise ShapeMismatchError(f"velocity field returned {v.shape} for state {a.shape}")
        a = a + dtau * v
        if not np.isfinite(a).all():
            raise NonFiniteError(
                f"Euler state became non-finite at step {i + 1}/{steps} (tau={tau:.3f})"
            )
    return a
