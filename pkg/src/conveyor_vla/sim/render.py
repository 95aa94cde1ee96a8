"""Grayscale multi-view rasterizer.

View 0 shows the whole unit square; views 1 and 2 are zoomed crops centered
left and right of the gripper. Pixel (i, j) of a view samples the world at
the center of the cell, row i running along y and column j along x.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from conveyor_vla.config import render_config
from conveyor_vla.models.world import WorldState
from conveyor_vla.sim.world import WorldSpec, default_spec


@dataclass(frozen=True)
class RenderSpec:
    image_size: int
    n_views: int
    zoom: float
    view_offset: float
    background: float
    belt: float
    bin: float
    gripper_open: float
    gripper_closed: float
    gripper_arm: float

    @classmethod
    def from_config(cls) -> "RenderSpec":
        return cls(**render_config())


@lru_cache
def default_render_spec() -> RenderSpec:
    return RenderSpec.from_config()


@dataclass(frozen=True)
class ViewWindow:
    """World-space square [x0, x0 + span] x [y0, y0 + span] shown by one view."""

    x0: float
    y0: float
    span: float

    def pixel_centers(self, size: int) -> tuple[np.ndarray, np.ndarray]:
        """World (x, y) of every pixel center, each (size, size)."""
        c = (np.arange(size) + 0.5) / size * self.span
        return np.meshgrid(self.x0 + c, self.y0 + c, indexing="xy")


def view_windows(state: WorldState, rspec: RenderSpec | None = None) -> list[ViewWindow]:
    rspec = rspec or default_render_spec()
    windows = [ViewWindow(0.0, 0.0, 1.0)]
    span = 1.0 / rspec.zoom
    gx, gy = state.gripper
    for side in (-1.0, 1.0)[: max(rspec.n_views - 1, 0)]:
        cx = gx + side * rspec.view_offset
        windows.append(ViewWindow(cx - span / 2, gy - span / 2, span))
    return windows[: rspec.n_views]


def disk_mask(
    window: ViewWindow, size: int, center: tuple[float, float], radius: float
) -> np.ndarray:
    x, y = window.pixel_centers(size)
    return (x - center[0]) ** 2 + (y - center[1]) ** 2 <= radius * radius


def _render_view(
    state: WorldState, window: ViewWindow, spec: WorldSpec, rspec: RenderSpec
) -> np.ndarray:
    size = rspec.image_size
    x, y = window.pixel_centers(size)
    img = np.full((size, size), rspec.background, dtype=np.float32)
    inside = (x >= 0.0) & (x <= 1.0) & (y >= 0.0) & (y <= 1.0)
    img[~inside] = 0.0
    img[inside & (y >= state.belt_y[0]) & (y <= state.belt_y[1])] = rspec.belt
    for b in spec.bins:
        box = (np.abs(x - b.center[0]) <= b.half_size) & (np.abs(y - b.center[1]) <= b.half_size)
        img[box] = rspec.bin
    for obj in state.objects:
        if obj.lost:
            continue
        cls = spec.classes[obj.class_id]
        img[disk_mask(window, size, obj.position, obj.radius)] = cls.intensity
    gx, gy = state.gripper
    width = max(window.span / size, 0.004)
    arm = rspec.gripper_arm
    cross = ((np.abs(x - gx) <= width) & (np.abs(y - gy) <= arm)) | (
        (np.abs(y - gy) <= width) & (np.abs(x - gx) <= arm)
    )
    img[cross] = rspec.gripper_closed if state.grip > 0 else rspec.gripper_open
    return img


def render_views(
    state: WorldState, spec: WorldSpec | None = None, rspec: RenderSpec | None = None
) -> np.ndarray:
    """(n_views, H, W) float32 images in [0, 1]."""
    spec = spec or default_spec()
    rspec = rspec or default_render_spec()
    return np.stack([_render_view(state, w, spec, rspec) for w in view_windows(state, rspec)])
