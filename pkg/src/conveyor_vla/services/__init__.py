"""Training, evaluation, ablation and serving services."""

from conveyor_vla.services.ablation_service import AblationService, run_ablation
from conveyor_vla.services.evaluation_service import EvaluationService, rollout_closed_loop
from conveyor_vla.services.policy_service import PolicyService
from conveyor_vla.services.training_service import TrainingService, train

__all__ = [
    "AblationService",
    "EvaluationService",
    "PolicyService",
    "TrainingService",
    "rollout_closed_loop",
    "run_ablation",
    "train",
]
