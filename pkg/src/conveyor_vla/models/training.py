"""Model and training configuration."""

import hashlib
from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Stage(str, Enum):
    PRETRAIN = "pretrain"
    POSTTRAIN = "posttrain"


class TokenizerMode(str, Enum):
    ANALYTIC = "analytic"
    LEARNED = "learned"


LATENT_DOWNSAMPLE = 8


class ModelConfig(BaseModel):
    """Architecture of the three-expert policy."""

    hidden: int = Field(default=128, ge=2)
    layers: int = Field(default=4, ge=1)
    heads: int = Field(default=4, ge=1)
    ffn_hidden: int = Field(default=512, ge=1)
    image_size: int = Field(default=64, description="Square grayscale views")
    patch_size: int = Field(default=8, description="Understanding-expert patch side")
    n_views: int = Field(default=3, ge=1)
    latent_channels: int = Field(default=4, ge=1, le=64)
    latent_tokens_side: int = Field(default=2, ge=1, description="P: foresight tokens per side")
    compress_channels: int = Field(default=32, ge=1)
    vocab_size: int = Field(default=32, ge=1)
    chunk_length: int = Field(default=16, ge=1)
    action_dim: int = Field(default=3, ge=1)
    proprio_dim: int = Field(default=3, ge=1)
    n_state: int = Field(default=1, ge=1)
    time_embed_dim: int = Field(default=32, ge=2)
    rope_base: float = 10000.0
    norm_eps: float = 1e-6
    init_std: float = 0.02
    dtype: str = Field(default="float32", pattern="^float(32|64)$")
    tokenizer_mode: TokenizerMode = TokenizerMode.ANALYTIC
    foresight: bool = True
    seed: int = 0

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelConfig":
        if self.hidden % self.heads or (self.hidden // self.heads) % 2:
            raise ValueError("hidden must split into heads of even width")
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be a multiple of patch_size")
        if self.image_size % LATENT_DOWNSAMPLE:
            raise ValueError(f"image_size must be a multiple of {LATENT_DOWNSAMPLE}")
        if self.latent_grid % self.latent_tokens_side:
            raise ValueError("latent grid must be a multiple of latent_tokens_side")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")
        return self

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def latent_grid(self) -> int:
        """G: latent cells per side."""
        return self.image_size // LATENT_DOWNSAMPLE

    @property
    def compress_kernel(self) -> int:
        """Kernel and stride of the G x G -> P x P compression."""
        return self.latent_grid // self.latent_tokens_side

    @property
    def patches_per_view(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def gen_tokens(self) -> int:
        """Two timestamp groups of P*P tokens per view."""
        return 2 * self.n_views * self.latent_tokens_side**2 if self.foresight else 0

    def config_hash(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode()).hexdigest()[:16]


class TrainConfig(BaseModel):
    """One training stage. JSON keys match the field names (`lambda` for lam)."""

    model_config = ConfigDict(populate_by_name=True, protected_namespaces=())

    stage: Stage = Stage.PRETRAIN
    batch_size: int = Field(default=64, ge=1)
    peak_lr: float = Field(default=5e-5, gt=0)
    final_lr: float = Field(default=5e-6, gt=0)
    warmup_steps: int = Field(default=0, ge=0)
    decay_steps: int = Field(default=0, ge=0)
    total_steps: int = Field(default=20_000, ge=0)
    betas: tuple[float, float] = (0.9, 0.95)
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    lam: float = Field(default=0.01, ge=0, alias="lambda")
    m: int = Field(default=15, ge=1, description="History / foresight interval")
    k: int = Field(default=16, ge=1, description="Action chunk length")
    K_euler: int = Field(default=10, ge=1)
    seed: int = 0
    no_foresight: bool = False
    from_scratch: bool = False
    mixture_weights: dict[str, float] | None = None

    datasets: list[str] = Field(default_factory=list)
    model: ModelConfig = Field(default_factory=ModelConfig)
    num_workers: int = Field(default=2, ge=0)
    queue_depth: int = Field(default=4, ge=1)
    init_checkpoint: str | None = None
    output_dir: str = "runs/default"
    log_every: int = Field(default=50, ge=1)
    checkpoint_every: int = Field(default=1000, ge=1)
    eval_every: int = Field(default=0, ge=0)
    eval_settings: int = Field(
        default=5, ge=1, description="Settings per tier in periodic evaluation"
    )
    eval_tiers: list[str] = Field(default_factory=lambda: ["slow"])

    @model_validator(mode="after")
    def _sync(self) -> "TrainConfig":
        if self.stage is Stage.POSTTRAIN:
            if self.warmup_steps > self.total_steps:
                raise ValueError("warmup_steps exceeds total_steps")
            if self.decay_steps and self.decay_steps < self.warmup_steps:
                raise ValueError("decay_steps must not precede the end of warmup")
        wanted = {"chunk_length": self.k, "foresight": not self.no_foresight}
        if any(getattr(self.model, key) != value for key, value in wanted.items()):
            self.model = self.model.model_copy(update=wanted)
        return self

    @property
    def decay_end(self) -> int:
        """Step at which the post-training schedule reaches final_lr."""
        return self.decay_steps or self.total_steps


class AblationThresholds(BaseModel):
    """Success-rate margins the trained variants must clear."""

    pretrain_gain: float = Field(default=0.15, description="full minus from-scratch, all tiers")
    foresight_gain: float = Field(default=0.10, description="full minus no-foresight, moving tier")
    slow_success: float = Field(default=0.60, description="full model on the slow tier")
    foresight_wins: float = Field(
        default=0.80, description="moving rollouts where foresight beats persistence"
    )
    euler_gap: float = Field(default=0.05, description="largest success change across K")


class AblationConfig(BaseModel):
    """Pre-train / post-train study comparing the full model with its ablations.

    `pretrain` and `posttrain` are TrainConfig overrides applied on top of the
    presets of the same name.
    """

    model_config = ConfigDict(protected_namespaces=())

    output_dir: str = "runs/ablation"
    seed: int = 0
    pretrain_data: dict[str, int] = Field(
        default_factory=lambda: {"moving": 120, "crowded": 60, "static": 40, "fast": 40},
        description="Episodes per tier in the pre-training mixture",
    )
    posttrain_tier: str = "moving"
    posttrain_episodes: int = Field(default=20, ge=1)
    model: ModelConfig = Field(default_factory=ModelConfig)
    pretrain: dict[str, Any] = Field(default_factory=dict)
    posttrain: dict[str, Any] = Field(default_factory=dict)
    eval_tiers: list[str] = Field(default_factory=lambda: ["static", "slow", "moving"])
    eval_settings: int = Field(default=30, ge=1)
    euler_steps: list[int] = Field(default_factory=lambda: [10, 20], min_length=1)
    workers: int = Field(default=4, ge=1, description="Generation and rollout threads")
    thresholds: AblationThresholds = Field(default_factory=AblationThresholds)

    @model_validator(mode="after")
    def _check(self) -> "AblationConfig":
        if not self.pretrain_data or min(self.pretrain_data.values()) < 1:
            raise ValueError("pre-training needs at least one episode per listed tier")
        missing = {"slow", "moving"} - set(self.eval_tiers)
        if missing:
            raise ValueError(f"eval_tiers must include {sorted(missing)}")
        if any(k < 1 for k in self.euler_steps):
            raise ValueError("euler_steps must be >= 1")
        return self
