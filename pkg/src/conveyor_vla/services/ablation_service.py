"""Pre-train / post-train study: the full model against training from scratch and
against dropping foresight, compared by closed-loop success on held-out settings."""

import logging
import time
from collections.abc import Mapping
from pathlib import Path
from typing import Any

from conveyor_vla.config import get_defaults
from conveyor_vla.models.metrics import AblationReport, SuiteSummary, TierSummary
from conveyor_vla.models.training import AblationConfig, AblationThresholds, TrainConfig
from conveyor_vla.services.evaluation_service import EvaluationService
from conveyor_vla.services.training_service import TrainingService, open_stores
from conveyor_vla.sim import generate_dataset

logger = logging.getLogger(__name__)

FULL, FROM_SCRATCH, NO_FORESIGHT = "full", "from_scratch", "no_foresight"
VARIANTS = (FULL, FROM_SCRATCH, NO_FORESIGHT)

# success rates are multiples of 1/settings
TOLERANCE = 1e-9


def tier_summary(summary: SuiteSummary, tier: str) -> TierSummary:
    for row in summary.tiers:
        if row.tier == tier:
            return row
    raise KeyError(f"tier {tier!r} was not evaluated")


def build_report(
    variants: Mapping[str, SuiteSummary],
    euler_sweep: Mapping[int, SuiteSummary],
    thresholds: AblationThresholds,
    *,
    checkpoints: Mapping[str, str] | None = None,
    wall_time: float = 0.0,
) -> AblationReport:
    """Margins between the variants and whether each clears its threshold."""
    missing = set(VARIANTS) - set(variants)
    if missing:
        raise KeyError(f"missing variants: {sorted(missing)}")
    full = variants[FULL]
    pretrain_gain = full.overall_success_rate - variants[FROM_SCRATCH].overall_success_rate
    foresight_gain = (
        tier_summary(full, "moving").success_rate
        - tier_summary(variants[NO_FORESIGHT], "moving").success_rate
    )
    slow_success = tier_summary(full, "slow").success_rate
    wins = tier_summary(full, "moving").foresight_beats_persistence
    rates = [s.overall_success_rate for s in euler_sweep.values()] or [full.overall_success_rate]
    euler_gap = max(rates) - min(rates)

    checks = {
        "pretrain_gain": pretrain_gain >= thresholds.pretrain_gain - TOLERANCE,
        "foresight_gain": foresight_gain >= thresholds.foresight_gain - TOLERANCE,
        "slow_success": slow_success >= thresholds.slow_success - TOLERANCE,
        "foresight_wins": wins is not None and wins >= thresholds.foresight_wins - TOLERANCE,
        "euler_gap": euler_gap <= thresholds.euler_gap + TOLERANCE,
    }
    return AblationReport(
        variants=dict(variants),
        euler_sweep=dict(euler_sweep),
        checkpoints=dict(checkpoints or {}),
        pretrain_gain=pretrain_gain,
        foresight_gain=foresight_gain,
        slow_success=slow_success,
        foresight_wins=wins,
        euler_gap=euler_gap,
        checks=checks,
        wall_time=wall_time,
    )


class AblationService:
    """Generates the datasets, trains the three variants and evaluates them."""

    def __init__(self, config: AblationConfig) -> None:
        self._cfg = config
        self._out = Path(config.output_dir)

    @property
    def config(self) -> AblationConfig:
        return self._cfg

    def generate_data(self) -> tuple[list[str], list[str]]:
        """One pre-training dataset per tier, then the narrow post-training dataset."""
        cfg = self._cfg
        pretrain = []
        for i, (tier, episodes) in enumerate(sorted(cfg.pretrain_data.items())):
            out = self._out / "data" / f"pretrain_{tier}"
            generate_dataset(
                out, episodes=episodes, seed=cfg.seed + i, tier=tier, workers=cfg.workers
            )
            pretrain.append(str(out))
        target = self._out / "data" / f"posttrain_{cfg.posttrain_tier}"
        generate_dataset(
            target,
            episodes=cfg.posttrain_episodes,
            seed=cfg.seed + len(pretrain),
            tier=cfg.posttrain_tier,
            workers=cfg.workers,
        )
        return pretrain, [str(target)]

    def stage_config(
        self, stage: str, datasets: list[str], run: str, **flags: Any
    ) -> TrainConfig:
        """Preset of `stage`, the study's overrides for it, then per-run flags."""
        cfg = self._cfg
        data = {
            **get_defaults()["presets"][stage],
            **getattr(cfg, stage),
            "datasets": datasets,
            "model": cfg.model,
            "seed": cfg.seed,
            "output_dir": str(self._out / run),
            **flags,
        }
        return TrainConfig.model_validate(data)

    def _train(self, config: TrainConfig) -> Path:
        return TrainingService(config, open_stores(config.datasets)).train().checkpoint

    def train_variants(self, pretrain: list[str], posttrain: list[str]) -> dict[str, Path]:
        base = self._train(self.stage_config("pretrain", pretrain, "full/pretrain"))
        checkpoints = {
            FULL: self._train(
                self.stage_config(
                    "posttrain", posttrain, "full/posttrain", init_checkpoint=str(base)
                )
            ),
            FROM_SCRATCH: self._train(
                self.stage_config("posttrain", posttrain, "from_scratch", from_scratch=True)
            ),
        }
        bare = self._train(
            self.stage_config("pretrain", pretrain, "no_foresight/pretrain", no_foresight=True)
        )
        checkpoints[NO_FORESIGHT] = self._train(
            self.stage_config(
                "posttrain",
                posttrain,
                "no_foresight/posttrain",
                init_checkpoint=str(bare),
                no_foresight=True,
            )
        )
        return checkpoints

    def evaluate(self, checkpoint: Path, euler_steps: int, name: str) -> SuiteSummary:
        cfg = self._cfg
        service = EvaluationService.from_checkpoint(
            checkpoint, euler_steps=euler_steps, workers=cfg.workers
        )
        summary, _ = service.evaluate_suite(
            cfg.eval_settings, cfg.eval_tiers, out_dir=self._out / "eval" / name
        )
        return summary

    def run(self) -> AblationReport:
        cfg = self._cfg
        started = time.monotonic()
        self._out.mkdir(parents=True, exist_ok=True)
        pretrain, posttrain = self.generate_data()
        checkpoints = self.train_variants(pretrain, posttrain)

        k0 = cfg.euler_steps[0]
        variants = {name: self.evaluate(path, k0, name) for name, path in checkpoints.items()}
        sweep = {k0: variants[FULL]}
        for k in cfg.euler_steps[1:]:
            sweep[k] = self.evaluate(checkpoints[FULL], k, f"{FULL}_k{k}")

        report = build_report(
            variants,
            sweep,
            cfg.thresholds,
            checkpoints={name: str(path) for name, path in checkpoints.items()},
            wall_time=time.monotonic() - started,
        )
        (self._out / "report.json").write_text(report.model_dump_json(indent=2) + "\n")
        logger.info(
            "Ablation: pretrain gain %.3f, foresight gain %.3f, slow %.3f, wins %s, "
            "euler gap %.3f (%.0fs)",
            report.pretrain_gain,
            report.foresight_gain,
            report.slow_success,
            report.foresight_wins,
            report.euler_gap,
            report.wall_time,
        )
        failed = sorted(name for name, ok in report.checks.items() if not ok)
        if failed:
            logger.warning("Ablation margins not met: %s", ", ".join(failed))
        return report


def run_ablation(config: AblationConfig) -> AblationReport:
    return AblationService(config).run()
