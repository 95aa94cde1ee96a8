"""Episode records and dataset manifests."""

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field

EPISODE_FORMAT_VERSION = 1


@dataclass(eq=False)
class EpisodeRecord:
    """One demonstration.

    frames [T, n_views, H, W], proprio [T, 3] (x, y, grip), actions [T, 3]
    (dx, dy, grip command), instruction [L] word ids.
    """

    instruction: np.ndarray
    frames: np.ndarray
    proprio: np.ndarray
    actions: np.ndarray
    success: bool

    def __post_init__(self) -> None:
        n = len(self.frames)
        if len(self.proprio) != n or len(self.actions) != n:
            lengths = f"{n}, {len(self.proprio)}, {len(self.actions)}"
            raise ValueError(f"frames/proprio/actions lengths differ: {lengths}")

    @property
    def length(self) -> int:
        return len(self.frames)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EpisodeRecord):
            return NotImplemented
        return (
            self.success == other.success
            and np.array_equal(self.instruction, other.instruction)
            and np.array_equal(self.frames, other.frames)
            and np.array_equal(self.proprio, other.proprio)
            and np.array_equal(self.actions, other.actions)
        )


class NormStats(BaseModel):
    """Per-dimension ranges mapped to [-1, 1]."""

    action_min: list[float]
    action_max: list[float]
    proprio_min: list[float]
    proprio_max: list[float]

    @staticmethod
    def _scale(x: np.ndarray, lo: list[float], hi: list[float]) -> np.ndarray:
        lo_a, hi_a = np.asarray(lo), np.asarray(hi)
        span = np.where(hi_a - lo_a > 1e-12, hi_a - lo_a, 1.0)
        return 2.0 * (x - lo_a) / span - 1.0

    @staticmethod
    def _unscale(x: np.ndarray, lo: list[float], hi: list[float]) -> np.ndarray:
        lo_a, hi_a = np.asarray(lo), np.asarray(hi)
        span = np.where(hi_a - lo_a > 1e-12, hi_a - lo_a, 1.0)
        return (x + 1.0) * 0.5 * span + lo_a

    def normalize_actions(self, actions: np.ndarray) -> np.ndarray:
        return self._scale(actions, self.action_min, self.action_max)

    def denormalize_actions(self, actions: np.ndarray) -> np.ndarray:
        return self._unscale(actions, self.action_min, self.action_max)

    def normalize_proprio(self, proprio: np.ndarray) -> np.ndarray:
        return self._scale(proprio, self.proprio_min, self.proprio_max)

    @classmethod
    def merge(cls, stats: list["NormStats"]) -> "NormStats":
        """Union range over several datasets."""
        return cls(
            action_min=np.min([s.action_min for s in stats], axis=0).tolist(),
            action_max=np.max([s.action_max for s in stats], axis=0).tolist(),
            proprio_min=np.min([s.proprio_min for s in stats], axis=0).tolist(),
            proprio_max=np.max([s.proprio_max for s in stats], axis=0).tolist(),
        )


class DatasetManifest(BaseModel):
    """Contents of manifest.json in a dataset directory."""

    format_version: int = EPISODE_FORMAT_VERSION
    name: str
    episode_count: int = Field(..., ge=0)
    frame_count: int = Field(..., ge=0)
    image_shape: tuple[int, int]
    n_views: int
    fps: float
    class_names: list[str]
    bin_names: list[str]
    tier: str
    belt_speed_range: tuple[float, float]
    object_count: int
    seed: int
    attempts: int
    unsolvable: int
    expert_success_rate: float
    norm_stats: NormStats
    sampling_weight: float = 1.0

    def episode_file(self, index: int) -> str:
        return f"ep_{index:06d}.bin"
