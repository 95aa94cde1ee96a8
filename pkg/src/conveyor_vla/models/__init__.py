"""Data models."""

from conveyor_vla.models.episode import DatasetManifest, EpisodeRecord, NormStats
from conveyor_vla.models.layout import Expert, Segment, SegmentLayout
from conveyor_vla.models.metrics import (
    AblationReport,
    EpisodeOutcome,
    EvalMetrics,
    MetricsLog,
    StepMetrics,
    SuiteSummary,
    TierSummary,
)
from conveyor_vla.models.plan import AssignmentPlan, BalanceMetrics, DatasetMeta, ThroughputReport
from conveyor_vla.models.training import (
    AblationConfig,
    AblationThresholds,
    ModelConfig,
    Stage,
    TokenizerMode,
    TrainConfig,
)
from conveyor_vla.models.world import WorldObject, WorldState

__all__ = [
    "AblationConfig",
    "AblationReport",
    "AblationThresholds",
    "AssignmentPlan",
    "BalanceMetrics",
    "DatasetManifest",
    "DatasetMeta",
    "EpisodeOutcome",
    "EpisodeRecord",
    "EvalMetrics",
    "Expert",
    "MetricsLog",
    "ModelConfig",
    "NormStats",
    "Segment",
    "SegmentLayout",
    "Stage",
    "StepMetrics",
    "SuiteSummary",
    "ThroughputReport",
    "TierSummary",
    "TokenizerMode",
    "TrainConfig",
    "WorldObject",
    "WorldState",
]
