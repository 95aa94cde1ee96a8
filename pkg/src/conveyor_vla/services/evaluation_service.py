"""Closed-loop rollouts on the conveyor and the per-tier evaluation suite."""

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from conveyor_vla.action.flow import euler_sample
from conveyor_vla.config import get_defaults
from conveyor_vla.foresight.tokenizer import LearnedTokenizer, build_tokenizer
from conveyor_vla.media import write_triplet
from conveyor_vla.models.episode import NormStats
from conveyor_vla.models.metrics import EpisodeOutcome, SuiteSummary, TierSummary
from conveyor_vla.models.world import WorldState
from conveyor_vla.network.policy import UnifiedPolicy
from conveyor_vla.persistence import Checkpoint, check_compatible, load_checkpoint
from conveyor_vla.sim.dataset import evaluation_seeds, initial_state
from conveyor_vla.sim.expert import scripted_expert
from conveyor_vla.sim.language import encode_instruction, instruction_text
from conveyor_vla.sim.render import default_render_spec, render_views
from conveyor_vla.sim.world import default_spec, is_success, proprio, step_env

logger = logging.getLogger(__name__)

RESULT_COLUMNS = (
    "tier", "setting", "seed", "success", "steps", "foresight_error", "persistence_error"
)
CHUNK_COLUMNS = ("tier", "setting", "plan", "index", "dx", "dy", "grip")


@dataclass
class Observation:
    instruction: np.ndarray
    views: np.ndarray
    history_views: np.ndarray
    proprio: np.ndarray
    step: int


@dataclass
class Plan:
    """Actions to execute before observing again, plus the optional foresight image."""

    actions: np.ndarray
    predicted_views: np.ndarray | None = None


class RolloutPolicy(Protocol):
    def plan(self, state: WorldState, obs: Observation) -> Plan: ...


class ExpertPolicy:
    """The scripted expert behind the rollout interface (uses the true state)."""

    def plan(self, state: WorldState, obs: Observation) -> Plan:
        return Plan(actions=scripted_expert(state)[None, :])


class ModelPolicy:
    """Samples a full action chunk per observation with K Euler steps."""

    def __init__(
        self, policy: UnifiedPolicy, norm: NormStats, *, euler_steps: int, rng: np.random.Generator
    ) -> None:
        self._policy = policy
        self._norm = norm
        self._steps = euler_steps
        self._rng = rng

    def plan(self, state: WorldState, obs: Observation) -> Plan:
        cfg = self._policy.config
        context = self._policy.build_context(
            obs.instruction[None],
            obs.views[None],
            obs.history_views[None],
            self._norm.normalize_proprio(obs.proprio)[None],
        )
        noise = self._rng.standard_normal((1, cfg.chunk_length, cfg.action_dim))
        chunk = euler_sample(self._policy.velocity_fn(context), noise, self._steps)[0]
        predicted = None
        if context.z_hat is not None:
            predicted = np.asarray(self._policy.tokenizer.decode(context.z_hat.data[0]))
        return Plan(actions=self._norm.denormalize_actions(chunk), predicted_views=predicted)


@dataclass
class RolloutTrace:
    outcome: EpisodeOutcome
    frames: list[np.ndarray] = field(default_factory=list)
    predictions: dict[int, np.ndarray] = field(default_factory=dict)
    chunks: list[np.ndarray] = field(default_factory=list)


def rollout_closed_loop(
    policy: RolloutPolicy, tier: str, seed: int, setting: int, *, m: int = 15
) -> RolloutTrace:
    """Plan, execute the whole plan, observe again; until success, loss or timeout."""
    spec = default_spec()
    state = initial_state(seed, setting, tier)
    instruction = encode_instruction(instruction_text(state, spec), spec)
    frames = [render_views(state, spec)]
    predictions: dict[int, np.ndarray] = {}
    chunks: list[np.ndarray] = []
    trajectory = [(state.gripper[0], state.gripper[1], state.grip)]
    success = False
    while state.step < spec.max_steps and not success and not state.target.lost:
        t = state.step
        obs = Observation(
            instruction=instruction,
            views=frames[t],
            history_views=frames[max(t - m, 0)],
            proprio=proprio(state),
            step=t,
        )
        plan = policy.plan(state, obs)
        chunks.append(plan.actions)
        if plan.predicted_views is not None:
            predictions[t] = plan.predicted_views
        for action in plan.actions:
            state = step_env(state, action, spec)
            frames.append(render_views(state, spec))
            trajectory.append((state.gripper[0], state.gripper[1], state.grip))
            if is_success(state, spec):
                success = True
                break
            if state.step >= spec.max_steps or state.target.lost:
                break

    fore, persist = foresight_errors(frames, predictions, m)
    outcome = EpisodeOutcome(
        tier=tier,
        setting=setting,
        seed=seed,
        success=success,
        steps=state.step,
        target_lost=state.target.lost,
        foresight_error=fore,
        persistence_error=persist,
        trajectory=trajectory,
    )
    return RolloutTrace(outcome, frames, predictions, chunks)


def foresight_errors(
    frames: list[np.ndarray], predictions: dict[int, np.ndarray], m: int
) -> tuple[float | None, float | None]:
    """Mean absolute pixel error of predicted t+m frames and of copying frame t."""
    fore, persist = [], []
    for t, predicted in sorted(predictions.items()):
        if t + m >= len(frames):
            continue
        actual = frames[t + m]
        fore.append(float(np.mean(np.abs(np.clip(predicted, 0.0, 1.0) - actual))))
        persist.append(float(np.mean(np.abs(frames[t] - actual))))
    if not fore:
        return None, None
    return float(np.mean(fore)), float(np.mean(persist))


def load_policy(path: Path) -> tuple[UnifiedPolicy, NormStats, Checkpoint]:
    """Policy and normalization statistics from a checkpoint file."""
    ckpt = load_checkpoint(Path(path))
    rspec = default_render_spec()
    check_compatible(ckpt, image_size=rspec.image_size, n_views=rspec.n_views, action_dim=3)
    tokenizer = build_tokenizer(ckpt.model)
    if isinstance(tokenizer, LearnedTokenizer):
        tokenizer.load_state(ckpt.tokenizer_params)
        tokenizer.freeze()
    policy = UnifiedPolicy(ckpt.model, tokenizer=tokenizer)
    policy.load_state(ckpt.params)
    return policy, ckpt.norm_stats, ckpt


def _mean(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def summarize_tier(tier: str, outcomes: list[EpisodeOutcome]) -> TierSummary:
    paired = [
        (o.foresight_error, o.persistence_error)
        for o in outcomes
        if o.foresight_error is not None and o.persistence_error is not None
    ]
    return TierSummary(
        tier=tier,
        rollouts=len(outcomes),
        success_rate=sum(o.success for o in outcomes) / len(outcomes) if outcomes else 0.0,
        mean_steps=float(np.mean([o.steps for o in outcomes])) if outcomes else 0.0,
        foresight_error=_mean([o.foresight_error for o in outcomes]),
        persistence_error=_mean([o.persistence_error for o in outcomes]),
        foresight_beats_persistence=(
            sum(f < p for f, p in paired) / len(paired) if paired else None
        ),
    )


class EvaluationService:
    """Runs the seeded settings of every tier against one policy."""

    def __init__(
        self,
        policy: UnifiedPolicy | None,
        norm: NormStats | None,
        *,
        euler_steps: int = 10,
        m: int = 15,
        workers: int = 4,
        checkpoint_name: str = "",
    ) -> None:
        self._policy = policy
        self._norm = norm
        self._euler_steps = euler_steps
        self._m = m
        self._workers = workers
        self._name = checkpoint_name

    @classmethod
    def from_checkpoint(
        cls, path: Path, *, euler_steps: int | None = None, workers: int = 4
    ) -> "EvaluationService":
        policy, norm, ckpt = load_policy(path)
        train_cfg = ckpt.meta.get("train_config", {})
        return cls(
            policy,
            norm,
            euler_steps=euler_steps or int(train_cfg.get("K_euler", 10)),
            m=int(train_cfg.get("m", 15)),
            workers=workers,
            checkpoint_name=str(path),
        )

    def _rollout_policy(self, tier: str, seed: int, setting: int) -> RolloutPolicy:
        if self._policy is None:
            return ExpertPolicy()
        rng = np.random.default_rng([seed, setting, self._euler_steps])
        return ModelPolicy(self._policy, self._norm, euler_steps=self._euler_steps, rng=rng)

    def run_tier(self, tier: str, settings: int) -> list[RolloutTrace]:
        seeds = evaluation_seeds(tier, settings)

        def one(pair: tuple[int, int]) -> RolloutTrace:
            seed, setting = pair
            policy = self._rollout_policy(tier, seed, setting)
            return rollout_closed_loop(policy, tier, seed, setting, m=self._m)

        with ThreadPoolExecutor(max_workers=max(self._workers, 1)) as pool:
            return list(pool.map(one, seeds))

    def evaluate_suite(
        self,
        settings: int | None = None,
        tiers: list[str] | None = None,
        *,
        out_dir: Path | None = None,
        dump_foresight: Path | None = None,
        chunks_csv: Path | None = None,
    ) -> tuple[SuiteSummary, list[EpisodeOutcome]]:
        defaults = get_defaults()["evaluation"]
        settings = settings or int(defaults["settings_per_tier"])
        tiers = tiers or list(defaults["tiers"])
        started = time.monotonic()
        summaries, outcomes, traces = [], [], []
        for tier in tiers:
            tier_traces = self.run_tier(tier, settings)
            tier_outcomes = [t.outcome for t in tier_traces]
            summaries.append(summarize_tier(tier, tier_outcomes))
            outcomes.extend(tier_outcomes)
            traces.extend(tier_traces)
            logger.info(
                "Tier %s: success %.3f over %d settings", tier, summaries[-1].success_rate, settings
            )

        total = len(outcomes)
        summary = SuiteSummary(
            checkpoint="expert" if self._policy is None else self._name or "policy",
            euler_steps=self._euler_steps,
            settings_per_tier=settings,
            tiers=summaries,
            overall_success_rate=sum(o.success for o in outcomes) / total if total else 0.0,
        )
        if out_dir is not None:
            write_results(Path(out_dir), summary, outcomes)
        if dump_foresight is not None:
            dump_foresight_triplets(Path(dump_foresight), traces, self._m)
        if chunks_csv is not None:
            write_chunks_csv(Path(chunks_csv), traces)
        logger.info(
            "Evaluation finished in %.1fs: overall success %.3f",
            time.monotonic() - started,
            summary.overall_success_rate,
        )
        return summary, outcomes


def write_results(out_dir: Path, summary: SuiteSummary, outcomes: list[EpisodeOutcome]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "results.csv").open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for o in outcomes:
            row = o.model_dump(include=set(RESULT_COLUMNS))
            writer.writerow({c: "" if row[c] is None else row[c] for c in RESULT_COLUMNS})
    with (out_dir / "summary.json").open("w") as f:
        json.dump(summary.model_dump(mode="json"), f, indent=2, sort_keys=True)
        f.write("\n")


def dump_foresight_triplets(directory: Path, traces: list[RolloutTrace], m: int) -> int:
    """current / predicted t+m / actual t+m graymaps of view 0 for every prediction."""
    written = 0
    for trace in traces:
        o = trace.outcome
        for t, predicted in sorted(trace.predictions.items()):
            if t + m >= len(trace.frames):
                continue
            stem = f"{o.tier}_{o.setting:03d}_t{t:03d}"
            write_triplet(trace.frames[t][0], predicted[0], trace.frames[t + m][0], directory, stem)
            written += 1
    logger.info("Wrote %d foresight triplets to %s", written, directory)
    return written


def write_chunks_csv(path: Path, traces: list[RolloutTrace]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CHUNK_COLUMNS)
        for trace in traces:
            o = trace.outcome
            for p, chunk in enumerate(trace.chunks):
                for i, (dx, dy, grip) in enumerate(np.asarray(chunk).tolist()):
                    writer.writerow([o.tier, o.setting, p, i, repr(dx), repr(dy), repr(grip)])
