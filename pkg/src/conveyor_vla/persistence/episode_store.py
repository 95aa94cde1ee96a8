"""Episode files (`ep_%06d.bin`) and dataset manifests on disk."""

import json
import logging
import threading
from pathlib import Path

import numpy as np

from conveyor_vla.errors import FormatError
from conveyor_vla.models.episode import EPISODE_FORMAT_VERSION, DatasetManifest, EpisodeRecord
from conveyor_vla.persistence.codec import (
    read_preamble,
    read_tensors,
    write_preamble,
    write_tensors,
)

logger = logging.getLogger(__name__)

EPISODE_MAGIC = b"IA1E"
MANIFEST_NAME = "manifest.json"
REQUIRED_TENSORS = ("frames", "proprio", "actions", "instruction", "success")


def save_episode(record: EpisodeRecord, path: Path) -> None:
    path = Path(path)
    with path.open("wb") as f:
        write_preamble(f, EPISODE_MAGIC, EPISODE_FORMAT_VERSION)
        write_tensors(
            f,
            {
                "frames": record.frames,
                "proprio": record.proprio,
                "actions": record.actions,
                "instruction": record.instruction,
                "success": np.array([1.0 if record.success else 0.0]),
            },
        )


def load_episode(path: Path) -> EpisodeRecord:
    path = Path(path)
    with path.open("rb") as f:
        read_preamble(f, EPISODE_MAGIC, EPISODE_FORMAT_VERSION)
        tensors = read_tensors(f)
    missing = [name for name in REQUIRED_TENSORS if name not in tensors]
    if missing:
        raise FormatError(f"{path.name}: missing tensors {missing}")
    try:
        return EpisodeRecord(
            instruction=tensors["instruction"],
            frames=tensors["frames"],
            proprio=tensors["proprio"],
            actions=tensors["actions"],
            success=bool(tensors["success"].reshape(-1)[0] > 0.5),
        )
    except ValueError as e:
        raise FormatError(f"{path.name}: {e}") from e


def save_manifest(manifest: DatasetManifest, directory: Path) -> Path:
    path = Path(directory) / MANIFEST_NAME
    with path.open("w") as f:
        json.dump(manifest.model_dump(mode="json"), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_manifest(path: Path) -> DatasetManifest:
    """Manifest from a dataset directory or the manifest file itself."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with path.open() as f:
        manifest = DatasetManifest.model_validate(json.load(f))
    if manifest.format_version != EPISODE_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported dataset format {manifest.format_version}")
    return manifest


class EpisodeStore:
    """Read access to one generated dataset directory with an episode cache."""

    def __init__(self, directory: Path, *, cache: bool = True) -> None:
        self._dir = Path(directory)
        self.manifest = load_manifest(self._dir)
        self._cache_enabled = cache
        self._cache: dict[int, EpisodeRecord] = {}
        self._lock = threading.Lock()

    @property
    def directory(self) -> Path:
        return self._dir

    @property
    def name(self) -> str:
        return self.manifest.name

    def __len__(self) -> int:
        return self.manifest.episode_count

    def get(self, index: int) -> EpisodeRecord:
        if not 0 <= index < len(self):
            raise IndexError(f"episode {index} outside dataset of {len(self)}")
        with self._lock:
            cached = self._cache.get(index)
        if cached is not None:
            return cached
        record = load_episode(self._dir / self.manifest.episode_file(index))
        if self._cache_enabled:
            with self._lock:
                self._cache[index] = record
        return record

    def load_all(self) -> list[EpisodeRecord]:
        return [self.get(i) for i in range(len(self))]
