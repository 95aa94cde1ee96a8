"""Single-observation inference for the policy server."""

import logging
from pathlib import Path

import numpy as np

from conveyor_vla.action.flow import euler_sample
from conveyor_vla.models.api import ActRequest, ActResponse
from conveyor_vla.models.episode import NormStats
from conveyor_vla.network.policy import UnifiedPolicy
from conveyor_vla.services.evaluation_service import load_policy
from conveyor_vla.sim.language import encode_instruction

logger = logging.getLogger(__name__)


class PolicyService:
    """Wraps a loaded checkpoint; one action chunk per request."""

    def __init__(
        self, policy: UnifiedPolicy, norm: NormStats, *, euler_steps: int = 10, name: str = ""
    ) -> None:
        self._policy = policy
        self._norm = norm
        self._euler_steps = euler_steps
        self.name = name

    @classmethod
    def from_checkpoint(cls, path: Path) -> "PolicyService":
        policy, norm, ckpt = load_policy(path)
        steps = int(ckpt.meta.get("train_config", {}).get("K_euler", 10))
        logger.info("Serving %s (%s)", path, policy.parameter_report())
        return cls(policy, norm, euler_steps=steps, name=str(path))

    def act(self, request: ActRequest) -> ActResponse:
        cfg = self._policy.config
        if isinstance(request.instruction, str):
            instruction = encode_instruction(request.instruction)
        else:
            instruction = np.asarray(request.instruction, dtype=np.int64)
        views = np.asarray(request.views, dtype=cfg.dtype)
        history = views
        if request.history_views is not None:
            history = np.asarray(request.history_views, dtype=cfg.dtype)
        proprio = self._norm.normalize_proprio(np.asarray(request.proprio, dtype=cfg.dtype))
        context = self._policy.build_context(
            instruction[None], views[None], history[None], proprio[None]
        )
        steps = request.euler_steps or self._euler_steps
        rng = np.random.default_rng(request.seed)
        noise = rng.standard_normal((1, cfg.chunk_length, cfg.action_dim))
        chunk = euler_sample(self._policy.velocity_fn(context), noise, steps)[0]
        return ActResponse(chunk=self._norm.denormalize_actions(chunk).tolist(), euler_steps=steps)
