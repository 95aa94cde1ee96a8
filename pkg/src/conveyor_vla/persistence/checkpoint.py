"""Checkpoint files: magic "IA1W", u32 version, length-prefixed JSON, named tensors."""

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from conveyor_vla.errors import FormatError, IncompatibleCheckpointError
from conveyor_vla.models.episode import NormStats
from conveyor_vla.models.training import ModelConfig
from conveyor_vla.persistence.codec import (
    read_blob,
    read_preamble,
    read_tensors,
    write_blob,
    write_preamble,
    write_tensors,
)

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"IA1W"
CHECKPOINT_VERSION = 1
TOKENIZER_PREFIX = "tokenizer."


@dataclass
class Checkpoint:
    model: ModelConfig
    params: dict[str, np.ndarray]
    norm_stats: NormStats | None = None
    tokenizer_params: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path: Path) -> Path:
    """Write atomically (temp file then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "model": ckpt.model.model_dump(mode="json"),
        "norm_stats": ckpt.norm_stats.model_dump(mode="json") if ckpt.norm_stats else None,
        "meta": ckpt.meta,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as f:
        write_preamble(f, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
        write_blob(f, json.dumps(header, sort_keys=True).encode("utf-8"))
        write_tensors(f, dict(sorted(ckpt.params.items())))
        tok = {TOKENIZER_PREFIX + k: v for k, v in sorted(ckpt.tokenizer_params.items())}
        write_tensors(f, tok)
    os.replace(tmp, path)
    logger.info("Saved checkpoint %s (%d tensors)", path, len(ckpt.params))
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    with path.open("rb") as f:
        read_preamble(f, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
        try:
            header = json.loads(read_blob(f, "config").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"{path}: unreadable config header") from e
        tensors = read_tensors(f)
    params = {k: v for k, v in tensors.items() if not k.startswith(TOKENIZER_PREFIX)}
    cut = len(TOKENIZER_PREFIX)
    tok = {k[cut:]: v for k, v in tensors.items() if k.startswith(TOKENIZER_PREFIX)}
    stats = header.get("norm_stats")
    return Checkpoint(
        model=ModelConfig.model_validate(header["model"]),
        params=params,
        norm_stats=NormStats.model_validate(stats) if stats else None,
        tokenizer_params=tok,
        meta=header.get("meta", {}),
    )


def check_compatible(ckpt: Checkpoint, *, image_size: int, n_views: int, action_dim: int) -> None:
    """Reject checkpoints trained for a different observation or action space."""
    cfg = ckpt.model
    problems = []
    if cfg.image_size != image_size:
        problems.append(f"image_size {cfg.image_size} != {image_size}")
    if cfg.n_views != n_views:
        problems.append(f"n_views {cfg.n_views} != {n_views}")
    if cfg.action_dim != action_dim:
        problems.append(f"action_dim {cfg.action_dim} != {action_dim}")
    if ckpt.norm_stats is None:
        problems.append("no normalization statistics")
    if problems:
        raise IncompatibleCheckpointError("; ".join(problems))
