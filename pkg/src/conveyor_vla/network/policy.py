"""The unified understanding / generation / action policy."""

import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from conveyor_vla.errors import ShapeMismatchError, UnknownTokenError
from conveyor_vla.foresight.head import ForesightHead
from conveyor_vla.foresight.tokenizer import LatentTokenizer, build_tokenizer
from conveyor_vla.models.layout import SegmentLayout
from conveyor_vla.models.training import ModelConfig
from conveyor_vla.network.layers import Embedding, Linear, sinusoidal_features
from conveyor_vla.network.module import Module
from conveyor_vla.network.mot import KVCache, MixtureOfTransformers
from conveyor_vla.numerics import Tensor, ops

logger = logging.getLogger(__name__)


@dataclass
class PolicyOutput:
    velocity: Tensor
    z_hat: Tensor | None
    layout: SegmentLayout


@dataclass
class InferenceContext:
    """Everything an Euler step needs besides the noisy chunk."""

    cache: KVCache
    state: Tensor
    z_hat: Tensor | None
    batch: int


class UnifiedPolicy(Module):
    """Prefix embedding, three-expert core, foresight head and action head."""

    def __init__(self, cfg: ModelConfig, tokenizer: LatentTokenizer | None = None) -> None:
        rng = np.random.default_rng(cfg.seed)
        d, std, dt = cfg.hidden, cfg.init_std, cfg.dtype
        p2 = cfg.patch_size**2
        self._cfg = cfg
        self.text_embed = Embedding(cfg.vocab_size, d, rng=rng, std=std, dtype=dt)
        self.patch_embed = Linear(p2, d, rng=rng, std=1.0 / np.sqrt(p2), dtype=dt)
        q, a, te = cfg.proprio_dim, cfg.action_dim, cfg.time_embed_dim
        self.state_proj = Linear(q, cfg.n_state * d, rng=rng, std=1.0 / np.sqrt(q), dtype=dt)
        self.action_in = Linear(a, d, rng=rng, std=1.0 / np.sqrt(a), dtype=dt)
        self.time_in = Linear(te, d, rng=rng, std=1.0 / np.sqrt(te), dtype=dt)
        self.time_out = Linear(d, d, rng=rng, std=std, dtype=dt)
        self.action_out = Linear(d, cfg.action_dim, rng=rng, std=std, dtype=dt)
        self.mot = MixtureOfTransformers(cfg, rng)
        self.foresight_head = ForesightHead(cfg, rng) if cfg.foresight else None
        self._tokenizer = tokenizer if tokenizer is not None else build_tokenizer(cfg)

    @property
    def config(self) -> ModelConfig:
        return self._cfg

    @property
    def tokenizer(self) -> LatentTokenizer:
        return self._tokenizer

    def mark_updated(self) -> None:
        self.mot.mark_updated()

    def parameter_report(self) -> dict[str, int]:
        """Parameter counts per expert plus the embedding and head layers."""
        report = {f"expert.{name}": n for name, n in self.mot.expert_parameter_counts().items()}
        head = self.foresight_head
        report["foresight_head"] = head.parameter_count() if head is not None else 0
        report["io"] = self.parameter_count() - sum(report.values())
        report["total"] = self.parameter_count()
        return report

    def _const(self, x: np.ndarray) -> Tensor:
        return Tensor(np.asarray(x, dtype=self._cfg.dtype))

    # -- embeddings ------------------------------------------------------------

    def layout(self, n_text: int) -> SegmentLayout:
        cfg = self._cfg
        return SegmentLayout(
            n_prefix=n_text + cfg.n_views * cfg.patches_per_view,
            n_gen=cfg.gen_tokens,
            n_state=cfg.n_state,
            n_action=cfg.chunk_length,
        )

    def _check_views(self, views: np.ndarray) -> np.ndarray:
        cfg = self._cfg
        views = np.asarray(views)
        if views.ndim == 3:
            views = views[None]
        expected = (cfg.n_views, cfg.image_size, cfg.image_size)
        if views.ndim != 4 or views.shape[1:] != expected:
            dims = ", ".join(map(str, expected))
            raise ShapeMismatchError(f"expected views (B, {dims}), got {views.shape}")
        return views

    def embed_prefix(self, instruction: np.ndarray, views: np.ndarray) -> Tensor:
        """Text tokens then vision patch tokens, (B, L + V * patches, D)."""
        cfg = self._cfg
        views = self._check_views(views)
        ids = np.asarray(instruction, dtype=np.int64)
        if ids.ndim == 1:
            ids = np.broadcast_to(ids, (views.shape[0], ids.shape[0]))
        if ids.shape[0] != views.shape[0]:
            raise ShapeMismatchError(
                f"instruction batch {ids.shape[0]} != views batch {views.shape[0]}"
            )
        if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
            bad = ids[(ids < 0) | (ids >= cfg.vocab_size)][0]
            raise UnknownTokenError(f"token id {bad} outside vocabulary of {cfg.vocab_size}")

        b, v, s, p = views.shape[0], cfg.n_views, cfg.image_size, cfg.patch_size
        n = s // p
        patches = views.reshape(b, v, n, p, n, p).transpose(0, 1, 2, 4, 3, 5)
        patches = patches.reshape(b, v * n * n, p * p)
        vision = self.patch_embed(self._const(patches))
        if ids.shape[1] == 0:
            return vision
        return ops.concat([self.text_embed(ids), vision], axis=1)

    def encode_latents(self, views: np.ndarray) -> np.ndarray:
        """Frozen-tokenizer latents (B, V, G, G, C) of batched views."""
        views = self._check_views(views)
        dtype = self._cfg.dtype
        return np.asarray(self._tokenizer.encode(views.astype(dtype)), dtype=dtype)

    def embed_gen(self, history_latents: np.ndarray, current_latents: np.ndarray) -> Tensor:
        """Two timestamp groups (t - m, then t) of compressed tokens, (B, 2 * V * P*P, D)."""
        cfg = self._cfg
        groups = []
        for latents in (history_latents, current_latents):
            latents = np.asarray(latents, dtype=cfg.dtype)
            b = latents.shape[0]
            g, c = cfg.latent_grid, cfg.latent_channels
            tokens = self.foresight_head.compress_tokens(latents.reshape(b * cfg.n_views, g, g, c))
            groups.append(tokens.reshape(b, cfg.n_views * cfg.latent_tokens_side**2, cfg.hidden))
        return ops.concat(groups, axis=1)

    def embed_state(self, proprio: np.ndarray) -> Tensor:
        cfg = self._cfg
        proprio = np.asarray(proprio, dtype=cfg.dtype).reshape(-1, cfg.proprio_dim)
        tokens = self.state_proj(self._const(proprio))
        return tokens.reshape(proprio.shape[0], cfg.n_state, cfg.hidden)

    def embed_actions(self, a_tau: np.ndarray | Tensor, tau: np.ndarray) -> Tensor:
        """Noisy chunk projection plus a flow-time embedding added to every token."""
        cfg = self._cfg
        a_tau = a_tau if isinstance(a_tau, Tensor) else self._const(a_tau)
        tau = np.atleast_1d(np.asarray(tau, dtype=np.float64))
        if tau.shape[0] != a_tau.shape[0]:
            tau = np.broadcast_to(tau, (a_tau.shape[0],))
        features = self._const(sinusoidal_features(tau, cfg.time_embed_dim))
        t_emb = self.time_out(ops.silu(self.time_in(features)))
        return self.action_in(a_tau) + t_emb.reshape(a_tau.shape[0], 1, cfg.hidden)

    # -- passes ----------------------------------------------------------------

    def forward(
        self,
        instruction: np.ndarray,
        views: np.ndarray,
        history_views: np.ndarray | None,
        proprio: np.ndarray,
        a_tau: np.ndarray,
        tau: np.ndarray,
        *,
        history_latents: np.ndarray | None = None,
        current_latents: np.ndarray | None = None,
    ) -> PolicyOutput:
        """Training pass: predicted velocity (B, k, d_a) and foresight latents."""
        cfg = self._cfg
        prefix = self.embed_prefix(instruction, views)
        layout = self.layout(prefix.shape[1] - cfg.n_views * cfg.patches_per_view)
        gen = None
        if cfg.foresight:
            if current_latents is None:
                current_latents = self.encode_latents(views)
            if history_latents is None:
                history_latents = self.encode_latents(history_views)
            gen = self.embed_gen(history_latents, current_latents)
        state = self.embed_state(proprio)
        out = self.mot.forward_unified(prefix, gen, state, self.embed_actions(a_tau, tau), layout)
        velocity = self.action_out(out.action)
        z_hat = None
        if cfg.foresight:
            z_hat = self.foresight_head.decompress_views(self.foresight_head.pool_time(out.gen))
        return PolicyOutput(velocity=velocity, z_hat=z_hat, layout=layout)

    def build_context(
        self,
        instruction: np.ndarray,
        views: np.ndarray,
        history_views: np.ndarray | None,
        proprio: np.ndarray,
    ) -> InferenceContext:
        """Cache the prefix (and generation block) once per observation."""
        cfg = self._cfg
        prefix = self.embed_prefix(instruction, views)
        _, cache = self.mot.forward_prefix(prefix)
        z_hat = None
        if cfg.foresight:
            history = history_views if history_views is not None else views
            gen = self.embed_gen(self.encode_latents(history), self.encode_latents(views))
            cache = self.mot.extend_cache(cache, gen)
            head = self.foresight_head
            z_hat = head.decompress_views(head.pool_time(cache.gen_hidden))
        return InferenceContext(
            cache=cache, state=self.embed_state(proprio), z_hat=z_hat, batch=prefix.shape[0]
        )

    def velocity(self, context: InferenceContext, a_tau: np.ndarray, tau: float) -> np.ndarray:
        tokens = self.embed_actions(a_tau, tau)
        out = self.mot.forward_with_cache(context.cache, None, context.state, tokens)
        return self.action_out(out.action).data

    def velocity_fn(self, context: InferenceContext) -> Callable[[float, np.ndarray], np.ndarray]:
        return lambda tau, a: self.velocity(context, a, tau)
