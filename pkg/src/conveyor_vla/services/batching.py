"""Training tuples (o_{t-m}, o_t, o_{t+m}, q_t, a_{t:t+k}) cut from episodes."""

from dataclasses import dataclass

import numpy as np

from conveyor_vla.foresight.tokenizer import LatentTokenizer
from conveyor_vla.models.episode import EpisodeRecord, NormStats


@dataclass
class TrainingSample:
    instruction: np.ndarray
    history: np.ndarray
    current: np.ndarray
    proprio: np.ndarray
    chunk: np.ndarray
    latents: np.ndarray | None = None  # (3, V, G, G, C): history, current, future


@dataclass
class Batch:
    instruction: np.ndarray
    history: np.ndarray
    current: np.ndarray
    proprio: np.ndarray
    chunk: np.ndarray
    history_latents: np.ndarray | None
    current_latents: np.ndarray | None
    future_latents: np.ndarray | None

    @property
    def size(self) -> int:
        return len(self.current)


def action_chunk(record: EpisodeRecord, t: int, k: int) -> np.ndarray:
    """a_{t:t+k} in env units; past the end the gripper holds still with its last command."""
    chunk = record.actions[t : t + k].astype(np.float64)
    if len(chunk) < k:
        hold = np.zeros((k - len(chunk), record.actions.shape[1]))
        hold[:, -1] = record.actions[-1, -1]
        chunk = np.concatenate([chunk, hold])
    return chunk


def build_sample(
    record: EpisodeRecord,
    t: int,
    *,
    m: int,
    k: int,
    norm: NormStats,
    tokenizer: LatentTokenizer | None = None,
) -> TrainingSample:
    """History clamps to the first frame and the future target to the last one."""
    last = record.length - 1
    if not 0 <= t <= last:
        raise IndexError(f"t={t} outside episode of {record.length} steps")
    history = record.frames[max(t - m, 0)]
    current = record.frames[t]
    latents = None
    if tokenizer is not None:
        future = record.frames[min(t + m, last)]
        latents = np.asarray(tokenizer.encode(np.stack([history, current, future])))
    return TrainingSample(
        instruction=record.instruction.astype(np.int64),
        history=history,
        current=current,
        proprio=norm.normalize_proprio(record.proprio[t].astype(np.float64)),
        chunk=norm.normalize_actions(action_chunk(record, t, k)),
        latents=latents,
    )


def draw_sample(
    record: EpisodeRecord,
    rng: np.random.Generator,
    *,
    m: int,
    k: int,
    norm: NormStats,
    tokenizer: LatentTokenizer | None = None,
) -> TrainingSample:
    t = int(rng.integers(0, record.length))
    return build_sample(record, t, m=m, k=k, norm=norm, tokenizer=tokenizer)


def collate(samples: list[TrainingSample]) -> Batch:
    width = max(len(s.instruction) for s in samples)
    instruction = np.zeros((len(samples), width), dtype=np.int64)
    for i, s in enumerate(samples):
        instruction[i, : len(s.instruction)] = s.instruction
    latents = None
    if all(s.latents is not None for s in samples):
        latents = np.stack([s.latents for s in samples])
    return Batch(
        instruction=instruction,
        history=np.stack([s.history for s in samples]),
        current=np.stack([s.current for s in samples]),
        proprio=np.stack([s.proprio for s in samples]),
        chunk=np.stack([s.chunk for s in samples]),
        history_latents=None if latents is None else latents[:, 0],
        current_latents=None if latents is None else latents[:, 1],
        future_latents=None if latents is None else latents[:, 2],
    )
