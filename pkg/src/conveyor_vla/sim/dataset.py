"""Demonstration datasets generated by running the scripted expert."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from conveyor_vla.config import get_defaults, tier_config
from conveyor_vla.models.episode import DatasetManifest, EpisodeRecord, NormStats
from conveyor_vla.models.world import WorldState
from conveyor_vla.persistence.episode_store import save_episode, save_manifest
from conveyor_vla.sim.expert import is_solvable, scripted_expert
from conveyor_vla.sim.language import encode_instruction, instruction_text
from conveyor_vla.sim.render import default_render_spec, render_views
from conveyor_vla.sim.world import (
    WorldSpec,
    default_spec,
    is_success,
    proprio,
    spawn_world,
    step_env,
)

logger = logging.getLogger(__name__)

MAX_ATTEMPT_FACTOR = 4


@dataclass
class Attempt:
    index: int
    record: EpisodeRecord | None
    unsolvable: bool = False


def initial_state(seed: int, index: int, tier: str, n_objects: int | None = None) -> WorldState:
    """Initialization `index` of a tier; identical for every caller with the same arguments."""
    cfg = tier_config(tier)
    rng = np.random.default_rng([seed, index])
    return spawn_world(rng, tuple(cfg["belt_speed"]), n_objects or int(cfg["objects"]))


def run_expert_episode(state: WorldState, spec: WorldSpec | None = None) -> EpisodeRecord:
    spec = spec or default_spec()
    frames, props, actions = [], [], []
    instruction = encode_instruction(instruction_text(state, spec), spec)
    success = False
    while state.step < spec.max_steps:
        action = scripted_expert(state, spec)
        frames.append(render_views(state, spec))
        props.append(proprio(state))
        actions.append(action)
        state = step_env(state, action, spec)
        if is_success(state, spec):
            success = True
            break
        if state.target.lost:
            break
    return EpisodeRecord(
        instruction=instruction.astype(np.float32),
        frames=np.stack(frames).astype(np.float32),
        proprio=np.stack(props).astype(np.float32),
        actions=np.stack(actions).astype(np.float32),
        success=success,
    )


def _attempt(seed: int, index: int, tier: str, n_objects: int | None) -> Attempt:
    state = initial_state(seed, index, tier, n_objects)
    if not is_solvable(state):
        return Attempt(index, None, unsolvable=True)
    return Attempt(index, run_expert_episode(state))


def norm_stats_of(records: list[EpisodeRecord]) -> NormStats:
    actions = np.concatenate([r.actions for r in records])
    props = np.concatenate([r.proprio for r in records])
    return NormStats(
        action_min=actions.min(axis=0).astype(float).tolist(),
        action_max=actions.max(axis=0).astype(float).tolist(),
        proprio_min=props.min(axis=0).astype(float).tolist(),
        proprio_max=props.max(axis=0).astype(float).tolist(),
    )


def generate_dataset(
    out_dir: Path,
    *,
    episodes: int,
    seed: int,
    tier: str = "moving",
    n_objects: int | None = None,
    name: str | None = None,
    workers: int = 4,
    sampling_weight: float = 1.0,
) -> DatasetManifest:
    """Write `episodes` successful expert demonstrations plus manifest.json.

    Initializations are derived from (seed, attempt index) and consumed in
    index order, so the output does not depend on `workers`.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec, rspec = default_spec(), default_render_spec()
    cfg = tier_config(tier)

    kept: list[EpisodeRecord] = []
    attempts = unsolvable = failed = 0
    next_index = 0
    with ThreadPoolExecutor(max_workers=max(workers, 1)) as pool:
        while len(kept) < episodes and next_index < episodes * MAX_ATTEMPT_FACTOR:
            limit = episodes * MAX_ATTEMPT_FACTOR
            batch = range(next_index, min(next_index + episodes - len(kept), limit))
            next_index = batch.stop
            for attempt in pool.map(lambda i: _attempt(seed, i, tier, n_objects), batch):
                if len(kept) >= episodes:
                    break
                attempts += 1
                if attempt.unsolvable:
                    unsolvable += 1
                    logger.debug("Initialization %d unsolvable, skipped", attempt.index)
                    continue
                if not attempt.record.success:
                    failed += 1
                    logger.warning("Expert failed on initialization %d", attempt.index)
                    continue
                save_episode(attempt.record, out_dir / f"ep_{len(kept):06d}.bin")
                kept.append(attempt.record)

    if len(kept) < episodes:
        logger.warning(
            "Only %d of %d episodes succeeded after %d attempts", len(kept), episodes, attempts
        )
    if not kept:
        raise RuntimeError(f"expert produced no successful episode for tier {tier!r}")
    solvable = attempts - unsolvable
    manifest = DatasetManifest(
        name=name or out_dir.name,
        episode_count=len(kept),
        frame_count=sum(r.length for r in kept),
        image_shape=(rspec.image_size, rspec.image_size),
        n_views=rspec.n_views,
        fps=spec.fps,
        class_names=[c.name for c in spec.classes],
        bin_names=[b.name for b in spec.bins],
        tier=tier,
        belt_speed_range=tuple(cfg["belt_speed"]),
        object_count=n_objects or int(cfg["objects"]),
        seed=seed,
        attempts=attempts,
        unsolvable=unsolvable,
        expert_success_rate=(solvable - failed) / solvable if solvable else 0.0,
        norm_stats=norm_stats_of(kept),
        sampling_weight=sampling_weight,
    )
    save_manifest(manifest, out_dir)
    logger.info(
        "Wrote dataset %s: %d episodes, %d frames, expert success %.3f",
        out_dir,
        manifest.episode_count,
        manifest.frame_count,
        manifest.expert_success_rate,
    )
    return manifest


def evaluation_seeds(tier: str, settings: int) -> list[tuple[int, int]]:
    """(seed, index) pairs of the predefined evaluation settings for a tier."""
    defaults = get_defaults()
    base = int(defaults["evaluation"]["seed_offset"]) + 1000 * list(defaults["tiers"]).index(tier)
    return [(base, i) for i in range(settings)]
