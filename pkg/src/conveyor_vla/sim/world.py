"""Kinematic conveyor world: a belt moving +x, one gripper, two bins.

Each step moves the gripper (per-axis clip to the max step), applies the grip
command on the open/closed transition against the pre-step object positions,
then advances every free object by its velocity. Objects that leave the unit
square are lost.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from conveyor_vla.config import world_config
from conveyor_vla.models.world import WorldObject, WorldState

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObjectClass:
    name: str
    intensity: float
    radius: float


@dataclass(frozen=True)
class Bin:
    name: str
    center: tuple[float, float]
    half_size: float

    def contains(self, point: tuple[float, float], margin: float = 0.0) -> bool:
        reach = self.half_size - margin
        return abs(point[0] - self.center[0]) <= reach and abs(point[1] - self.center[1]) <= reach


@dataclass(frozen=True)
class WorldSpec:
    """World constants; `from_config` reads them from defaults.yaml."""

    max_step: float
    grab_radius: float
    belt_y: tuple[float, float]
    spawn_x: tuple[float, float]
    spawn_y: tuple[float, float]
    min_spacing: float
    gripper_start_x: tuple[float, float]
    gripper_start_y: tuple[float, float]
    max_steps: int
    fps: float
    classes: tuple[ObjectClass, ...]
    bins: tuple[Bin, ...]

    @classmethod
    def from_config(cls) -> "WorldSpec":
        cfg = world_config()
        return cls(
            max_step=float(cfg["max_step"]),
            grab_radius=float(cfg["grab_radius"]),
            belt_y=tuple(cfg["belt_y"]),
            spawn_x=tuple(cfg["spawn_x"]),
            spawn_y=tuple(cfg["spawn_y"]),
            min_spacing=float(cfg["min_spacing"]),
            gripper_start_x=tuple(cfg["gripper_start_x"]),
            gripper_start_y=tuple(cfg["gripper_start_y"]),
            max_steps=int(cfg["max_steps"]),
            fps=float(cfg["fps"]),
            classes=tuple(ObjectClass(**c) for c in cfg["classes"]),
            bins=tuple(
                Bin(b["name"], tuple(b["center"]), float(b["half_size"])) for b in cfg["bins"]
            ),
        )


@lru_cache
def default_spec() -> WorldSpec:
    return WorldSpec.from_config()


def _in_unit_square(p: tuple[float, float]) -> bool:
    return 0.0 <= p[0] <= 1.0 and 0.0 <= p[1] <= 1.0


def on_belt(point: tuple[float, float], spec: WorldSpec) -> bool:
    return spec.belt_y[0] <= point[1] <= spec.belt_y[1] and 0.0 <= point[0] <= 1.0


def _nearest_graspable(state: WorldState, point: np.ndarray, radius: float) -> int | None:
    best, best_d = None, radius
    for i, obj in enumerate(state.objects):
        if obj.lost or obj.placed_bin is not None or obj.held:
            continue
        d = float(np.hypot(obj.position[0] - point[0], obj.position[1] - point[1]))
        if d <= best_d:
            best, best_d = i, d
    return best


def step_env(state: WorldState, action: np.ndarray, spec: WorldSpec | None = None) -> WorldState:
    """Successor state; `state` is not modified."""
    spec = spec or default_spec()
    action = np.asarray(action, dtype=np.float64)
    delta = np.clip(action[:2], -spec.max_step, spec.max_step)
    gripper = np.clip(np.asarray(state.gripper) + delta, 0.0, 1.0)
    closing = bool(action[2] > 0.0)
    was_closed = state.grip > 0.0
    objects = [obj.model_copy() for obj in state.objects]

    if closing and not was_closed:
        hit = _nearest_graspable(state, gripper, spec.grab_radius)
        if hit is not None:
            objects[hit].held = True
            objects[hit].velocity = (0.0, 0.0)
    elif not closing and was_closed:
        for obj in objects:
            if not obj.held:
                continue
            obj.held = False
            obj.position = (float(gripper[0]), float(gripper[1]))
            placed = next((i for i, b in enumerate(spec.bins) if b.contains(obj.position)), None)
            if placed is not None:
                obj.placed_bin = placed
                obj.velocity = (0.0, 0.0)
            elif on_belt(obj.position, spec):
                obj.velocity = (state.belt_speed, 0.0)
            else:
                obj.velocity = (0.0, 0.0)

    for obj in objects:
        if obj.held:
            obj.position = (float(gripper[0]), float(gripper[1]))
        elif not obj.lost and obj.placed_bin is None:
            obj.position = (obj.position[0] + obj.velocity[0], obj.position[1] + obj.velocity[1])
            if not _in_unit_square(obj.position):
                obj.lost = True

    return state.model_copy(
        update={
            "gripper": (float(gripper[0]), float(gripper[1])),
            "grip": 1.0 if closing else -1.0,
            "objects": objects,
            "step": state.step + 1,
        }
    )


def is_success(state: WorldState, spec: WorldSpec | None = None) -> bool:
    """Target object released and resting inside its bin (pure geometry)."""
    spec = spec or default_spec()
    target = state.target
    if target.held or target.lost:
        return False
    return spec.bins[target.target_bin].contains(target.position)


def spawn_world(
    rng: np.random.Generator,
    belt_speed_range: tuple[float, float],
    n_objects: int,
    spec: WorldSpec | None = None,
) -> WorldState:
    """Random initial state: objects of distinct classes spread along the belt."""
    spec = spec or default_spec()
    n_objects = min(n_objects, len(spec.classes))
    lo, hi = belt_speed_range
    belt_speed = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    classes = rng.permutation(len(spec.classes))[:n_objects]

    span = spec.spawn_x[1] - spec.spawn_x[0] - spec.min_spacing * (n_objects - 1)
    if span < 0:
        raise ValueError(f"cannot place {n_objects} objects {spec.min_spacing} apart")
    offsets = np.sort(rng.uniform(0.0, span, n_objects))
    xs = spec.spawn_x[0] + offsets + spec.min_spacing * np.arange(n_objects)
    ys = rng.uniform(*spec.spawn_y, n_objects)
    bins = rng.integers(0, len(spec.bins), n_objects)
    objects = [
        WorldObject(
            class_id=int(c),
            position=(float(x), float(y)),
            velocity=(belt_speed, 0.0),
            radius=spec.classes[int(c)].radius,
            target_bin=int(b),
        )
        for c, x, y, b in zip(classes, xs, ys, bins, strict=True)
    ]
    gripper = (float(rng.uniform(*spec.gripper_start_x)), float(rng.uniform(*spec.gripper_start_y)))
    return WorldState(
        gripper=gripper,
        grip=-1.0,
        objects=objects,
        belt_y=spec.belt_y,
        belt_speed=belt_speed,
        target_index=int(rng.integers(0, n_objects)),
    )


def proprio(state: WorldState) -> np.ndarray:
    return np.array([state.gripper[0], state.gripper[1], state.grip])
