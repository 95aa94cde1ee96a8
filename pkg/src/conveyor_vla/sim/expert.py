"""Scripted interception expert used to generate demonstrations."""

import logging
from dataclasses import dataclass

import numpy as np

from conveyor_vla.models.world import WorldState
from conveyor_vla.sim.world import WorldSpec, default_spec

logger = logging.getLogger(__name__)

GRAB_FRACTION = 0.6
RELEASE_FRACTION = 0.5
OPEN, CLOSE = -1.0, 1.0


@dataclass(frozen=True)
class Intercept:
    """Earliest step count `steps` at which the gripper can sit on the object."""

    steps: int
    point: tuple[float, float]


def plan_intercept(
    state: WorldState, spec: WorldSpec | None = None, index: int | None = None
) -> Intercept | None:
    """Smallest n >= 1 with the object's pre-step position after n - 1 advances
    within n gripper moves (Chebyshev distance). None if it leaves the world first.
    """
    spec = spec or default_spec()
    obj = state.objects[state.target_index if index is None else index]
    if obj.lost or obj.placed_bin is not None:
        return None
    g = np.asarray(state.gripper)
    p = np.asarray(obj.position)
    v = np.asarray(obj.velocity)
    for n in range(1, spec.max_steps - state.step + 1):
        q = p + (n - 1) * v
        if np.any(q < 0.0) or np.any(q > 1.0):
            return None
        if np.max(np.abs(q - g)) <= n * spec.max_step + 1e-12:
            return Intercept(steps=n, point=(float(q[0]), float(q[1])))
    return None


def is_solvable(state: WorldState, spec: WorldSpec | None = None) -> bool:
    return plan_intercept(state, spec) is not None


def _move_toward(g: np.ndarray, point: np.ndarray, spec: WorldSpec) -> np.ndarray:
    return np.clip(point - g, -spec.max_step, spec.max_step)


def scripted_expert(state: WorldState, spec: WorldSpec | None = None) -> np.ndarray:
    """Action (dx, dy, grip) that intercepts the target, carries it to its bin and releases."""
    spec = spec or default_spec()
    g = np.asarray(state.gripper)
    target = state.target
    held = state.held_index()

    if held is not None:
        bin_ = spec.bins[state.objects[held].target_bin]
        if bin_.contains(state.gripper, margin=bin_.half_size * RELEASE_FRACTION):
            return np.array([0.0, 0.0, OPEN])
        return np.array([*_move_toward(g, np.asarray(bin_.center), spec), CLOSE])

    plan = plan_intercept(state, spec)
    if plan is None:
        return np.array([0.0, 0.0, OPEN])
    delta = _move_toward(g, np.asarray(plan.point), spec)
    if state.grip > 0:
        # a missed grasp leaves the gripper closed; reopen before trying again
        return np.array([*delta, OPEN])
    after = g + delta
    near = np.hypot(*(after - np.asarray(target.position))) <= GRAB_FRACTION * spec.grab_radius
    return np.array([*delta, CLOSE if near else OPEN])
