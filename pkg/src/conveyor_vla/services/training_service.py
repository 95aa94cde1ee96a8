"""Joint optimization of the foresight and flow-matching objectives."""

import logging
import time
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from conveyor_vla.action.flow import FlowSample, action_loss, make_flow_sample
from conveyor_vla.errors import NonFiniteError, TrainingDivergedError
from conveyor_vla.foresight.head import gen_loss
from conveyor_vla.foresight.tokenizer import LearnedTokenizer, build_tokenizer
from conveyor_vla.lpt import ShardedLoader, build_plan
from conveyor_vla.models.episode import NormStats
from conveyor_vla.models.metrics import EvalMetrics, MetricsLog, StepMetrics
from conveyor_vla.models.plan import DatasetMeta
from conveyor_vla.models.training import Stage, TokenizerMode, TrainConfig
from conveyor_vla.network.policy import UnifiedPolicy
from conveyor_vla.numerics import AdamW, GradTape, Tensor, clip_by_global_norm
from conveyor_vla.persistence import Checkpoint, EpisodeStore, load_checkpoint, save_checkpoint
from conveyor_vla.services.batching import Batch, TrainingSample, collate, draw_sample
from conveyor_vla.services.evaluation_service import EvaluationService

logger = logging.getLogger(__name__)

TOKENIZER_FIT_FRAMES = 2048


def total_loss(
    l_gen: Tensor | float | None, l_action: Tensor | float, lam: float
) -> Tensor | float:
    """lam * l_gen + l_action; without a foresight term it is l_action."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if l_gen is None:
        return l_action
    return lam * l_gen + l_action


def lr_at(step: int, config: TrainConfig) -> float:
    """Constant for pretraining; linear warmup then linear decay for post-training."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if config.stage is Stage.PRETRAIN:
        return config.peak_lr
    if config.warmup_steps > config.total_steps:
        raise ValueError("warmup_steps exceeds total_steps")
    warmup, end = config.warmup_steps, config.decay_end
    if step < warmup:
        return config.peak_lr * step / warmup
    if step >= end:
        return config.final_lr
    return config.peak_lr + (config.final_lr - config.peak_lr) * (step - warmup) / (end - warmup)


@dataclass
class LossTerms:
    total: Tensor
    l_gen: Tensor | None
    l_action: Tensor


def compute_losses(policy: UnifiedPolicy, batch: Batch, flow: FlowSample, lam: float) -> LossTerms:
    out = policy.forward(
        batch.instruction,
        batch.current,
        batch.history,
        batch.proprio,
        flow.a_tau,
        flow.tau,
        history_latents=batch.history_latents,
        current_latents=batch.current_latents,
    )
    l_action = action_loss(out.velocity, flow)
    l_gen = None
    if out.z_hat is not None:
        l_gen = gen_loss(out.z_hat, np.asarray(batch.future_latents, dtype=out.z_hat.dtype))
    return LossTerms(total=total_loss(l_gen, l_action, lam), l_gen=l_gen, l_action=l_action)


@dataclass
class TrainResult:
    checkpoint: Path
    metrics: MetricsLog
    steps: int


class TrainingService:
    """Builds the policy, shards the datasets over loader workers and runs the loop."""

    def __init__(self, config: TrainConfig, stores: Mapping[str, EpisodeStore]) -> None:
        if not stores:
            raise ValueError("training needs at least one dataset")
        self._cfg = config
        self._stores = dict(stores)
        self._out = Path(config.output_dir)
        self.metrics = MetricsLog()

        init = None
        if config.init_checkpoint and not config.from_scratch:
            init = load_checkpoint(Path(config.init_checkpoint))
        self._norm = self._norm_stats(init)
        self.policy = self._build_policy(init)
        self._optimizer = AdamW(
            self.policy.named_parameters(),
            betas=config.betas,
            eps=config.epsilon,
            weight_decay=config.weight_decay,
        )
        report = self.policy.parameter_report()
        logger.info("Policy parameters: %s", report)

    @property
    def norm_stats(self) -> NormStats:
        return self._norm

    def _norm_stats(self, init: Checkpoint | None) -> NormStats:
        stats = [s.manifest.norm_stats for s in self._stores.values()]
        if init is not None and init.norm_stats is not None:
            stats.append(init.norm_stats)
        return NormStats.merge(stats)

    def _build_policy(self, init: Checkpoint | None) -> UnifiedPolicy:
        model_cfg = self._cfg.model
        tokenizer = build_tokenizer(model_cfg)
        if isinstance(tokenizer, LearnedTokenizer):
            if init is not None and init.tokenizer_params:
                tokenizer.load_state(init.tokenizer_params)
                tokenizer.freeze()
            else:
                tokenizer.fit(self._fit_frames(), seed=self._cfg.seed)
        policy = UnifiedPolicy(model_cfg, tokenizer=tokenizer)
        if init is not None:
            own = policy.named_parameters()
            shared = {k: v for k, v in init.params.items() if k in own and own[k].shape == v.shape}
            skipped = sorted(set(init.params) - set(shared))
            policy.load_state(shared, strict=False)
            logger.info(
                "Initialized %d/%d tensors from %s (skipped %d)",
                len(shared),
                len(own),
                self._cfg.init_checkpoint,
                len(skipped),
            )
        elif self._cfg.from_scratch:
            logger.info("Training from scratch")
        return policy

    def _fit_frames(self) -> np.ndarray:
        rng = np.random.default_rng(self._cfg.seed)
        frames = []
        for store in self._stores.values():
            for i in range(len(store)):
                frames.append(store.get(i).frames.reshape(-1, *store.manifest.image_shape))
        stacked = np.concatenate(frames)
        pick = rng.choice(len(stacked), size=min(TOKENIZER_FIT_FRAMES, len(stacked)), replace=False)
        return stacked[np.sort(pick)]

    def _make_sample(
        self, dataset_id: str, episode: int, rng: np.random.Generator
    ) -> TrainingSample:
        tokenizer = self.policy.tokenizer if self._cfg.model.foresight else None
        return draw_sample(
            self._stores[dataset_id].get(episode),
            rng,
            m=self._cfg.m,
            k=self._cfg.k,
            norm=self._norm,
            tokenizer=tokenizer,
        )

    def _loader(self) -> ShardedLoader[TrainingSample]:
        cfg = self._cfg
        metas = [
            DatasetMeta(
                id=name,
                size=float(store.manifest.frame_count),
                path=str(store.directory),
                sampling_weight=store.manifest.sampling_weight,
            )
            for name, store in self._stores.items()
        ]
        plan = build_plan(metas, max(cfg.num_workers, 1), base_seed=cfg.seed)
        weights = cfg.mixture_weights or {m.id: m.sampling_weight for m in metas}
        return ShardedLoader(
            plan,
            {name: len(store) for name, store in self._stores.items()},
            self._make_sample,
            batch_size=cfg.batch_size,
            weights=weights,
            queue_depth=cfg.queue_depth,
            threaded=cfg.num_workers > 0,
        )

    def checkpoint(self, step: int) -> Checkpoint:
        tokenizer = self.policy.tokenizer
        return Checkpoint(
            model=self._cfg.model,
            params=self.policy.state(),
            norm_stats=self._norm,
            tokenizer_params=tokenizer.state() if isinstance(tokenizer, LearnedTokenizer) else {},
            meta={
                "stage": self._cfg.stage.value,
                "step": step,
                "parameters": self.policy.parameter_report(),
                "tokenizer_digest": tokenizer.digest(),
                "train_config": self._cfg.model_dump(mode="json", by_alias=True),
            },
        )

    def evaluate(self, step: int) -> EvalMetrics:
        """Short closed-loop evaluation of the current parameters."""
        cfg = self._cfg
        started = time.monotonic()
        service = EvaluationService(
            self.policy, self._norm, euler_steps=cfg.K_euler, m=cfg.m, workers=1
        )
        summary, outcomes = service.evaluate_suite(cfg.eval_settings, cfg.eval_tiers)
        errors = [o.foresight_error for o in outcomes if o.foresight_error is not None]
        return EvalMetrics(
            step=step,
            success_rate=summary.overall_success_rate,
            foresight_pixel_error=float(np.mean(errors)) if errors else None,
            wall_time=time.monotonic() - started,
        )

    def train(self) -> TrainResult:
        cfg = self._cfg
        self._out.mkdir(parents=True, exist_ok=True)
        ckpt_path = self._out / "checkpoint.ia1w"
        params = self.policy.named_parameters()
        lam = 0.0 if cfg.no_foresight else cfg.lam
        started = time.monotonic()
        logger.info(
            "Starting %s: %d steps, batch %d, lambda %g, foresight %s",
            cfg.stage.value,
            cfg.total_steps,
            cfg.batch_size,
            lam,
            cfg.model.foresight,
        )
        with self._loader() as loader:
            for step in range(cfg.total_steps):
                batch = collate(loader.next_batch())
                flow = make_flow_sample(batch.chunk, np.random.default_rng([cfg.seed, step]))
                try:
                    with GradTape() as tape:
                        losses = compute_losses(self.policy, batch, flow, lam)
                    grads = tape.backward(losses.total)
                    named = {n: grads[p.id].data for n, p in params.items() if p.id in grads}
                    clipped, norm = clip_by_global_norm(named, cfg.grad_clip)
                    if not np.isfinite(norm):
                        raise NonFiniteError(f"gradient norm is {norm}")
                except NonFiniteError as e:
                    # parameters are still those of the previous, finite step
                    last_good = save_checkpoint(self.checkpoint(step), self._out / "last_good.ia1w")
                    logger.exception("Training diverged at step %d", step)
                    raise TrainingDivergedError(step, last_good) from e

                if norm > 10 * cfg.grad_clip:
                    logger.warning(
                        "Step %d: gradient norm %.2f clipped to %.2f", step, norm, cfg.grad_clip
                    )
                lr = lr_at(step, cfg)
                self._optimizer.step(clipped, lr)
                self.policy.mark_updated()

                self.metrics.append(
                    StepMetrics(
                        step=step,
                        l_gen=losses.l_gen.item() if losses.l_gen is not None else 0.0,
                        l_action=losses.l_action.item(),
                        l_total=losses.total.item(),
                        grad_norm=norm,
                        lr=lr,
                    )
                )
                if step % cfg.log_every == 0 or step == cfg.total_steps - 1:
                    row = self.metrics.steps[-1]
                    logger.info(
                        "step %d l_total %.5f l_gen %.5f l_action %.5f grad %.3f lr %.2e (%.0fs)",
                        step,
                        row.l_total,
                        row.l_gen,
                        row.l_action,
                        row.grad_norm,
                        lr,
                        time.monotonic() - started,
                    )
                if (step + 1) % cfg.checkpoint_every == 0:
                    save_checkpoint(self.checkpoint(step + 1), ckpt_path)
                if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
                    self.metrics.append_eval(self.evaluate(step + 1))

        path = save_checkpoint(self.checkpoint(cfg.total_steps), ckpt_path)
        eval_path = self._out / "metrics_eval.csv" if cfg.eval_every else None
        self.metrics.flush(self._out / "metrics.csv", eval_path)
        return TrainResult(checkpoint=path, metrics=self.metrics, steps=cfg.total_steps)


def open_stores(paths: list[str]) -> dict[str, EpisodeStore]:
    """Episode stores keyed by dataset name (directory name on collision)."""
    stores: dict[str, EpisodeStore] = {}
    for p in paths:
        store = EpisodeStore(Path(p))
        key = store.name if store.name not in stores else Path(p).name
        stores[key] = store
    return stores


def train(config: TrainConfig) -> TrainResult:
    """Train on the datasets named in the config."""
    if config.model.tokenizer_mode is TokenizerMode.LEARNED and config.no_foresight:
        logger.info("Learned tokenizer is unused without foresight")
    return TrainingService(config, open_stores(config.datasets)).train()
