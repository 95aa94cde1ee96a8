"""Persistence layer: episodes, dataset manifests and checkpoints."""

from conveyor_vla.persistence.checkpoint import (
    Checkpoint,
    check_compatible,
    load_checkpoint,
    save_checkpoint,
)
from conveyor_vla.persistence.episode_store import (
    EpisodeStore,
    load_episode,
    load_manifest,
    save_episode,
    save_manifest,
)

__all__ = [
    "Checkpoint",
    "EpisodeStore",
    "check_compatible",
    "load_checkpoint",
    "load_episode",
    "load_manifest",
    "save_checkpoint",
    "save_episode",
    "save_manifest",
]
