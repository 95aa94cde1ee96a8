"""Mixture-of-Transformers core.

One attention pass runs over the concatenated prefix / generation / action
streams; every token is projected, normalized and fed forward by the weights
of its own expert, while keys and values are shared across experts under the
blockwise mask.
"""

import logging
import math
import threading
from collections import Counter
from dataclasses import dataclass

import numpy as np

from conveyor_vla.errors import LayoutError, ShapeMismatchError, StaleCacheError
from conveyor_vla.masking import build_blockwise_mask
from conveyor_vla.models.layout import Expert, Segment, SegmentLayout
from conveyor_vla.models.training import ModelConfig
from conveyor_vla.network.layers import FeedForward, Linear, RMSNorm, rope_tables
from conveyor_vla.network.module import Module
from conveyor_vla.numerics import Tensor, ops, stop_gradient

logger = logging.getLogger(__name__)

_SEGMENT_EXPERT = {
    Segment.PREFIX: Expert.UND,
    Segment.GEN: Expert.GEN,
    Segment.STATE: Expert.ACT,
    Segment.ACTION: Expert.ACT,
}


def route_segments(index: int, layout: SegmentLayout) -> Expert:
    """Expert whose weights process token `index`."""
    return _SEGMENT_EXPERT[layout.segment_of(index)]


class ExpertBlock(Module):
    """One transformer layer of one expert."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        d, std = cfg.hidden, cfg.init_std
        out_std = std / math.sqrt(2 * cfg.layers)
        self.attn_norm = RMSNorm(d, eps=cfg.norm_eps, dtype=cfg.dtype)
        self.wq = Linear(d, d, rng=rng, std=std, dtype=cfg.dtype, bias=False)
        self.wk = Linear(d, d, rng=rng, std=std, dtype=cfg.dtype, bias=False)
        self.wv = Linear(d, d, rng=rng, std=std, dtype=cfg.dtype, bias=False)
        self.wo = Linear(d, d, rng=rng, std=out_std, dtype=cfg.dtype, bias=False)
        self.ffn_norm = RMSNorm(d, eps=cfg.norm_eps, dtype=cfg.dtype)
        self.ffn = FeedForward(
            d, cfg.ffn_hidden, rng=rng, std=std, out_std=out_std, dtype=cfg.dtype
        )


class ExpertStack(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        self.layers = [ExpertBlock(cfg, rng) for _ in range(cfg.layers)]
        self.final_norm = RMSNorm(cfg.hidden, eps=cfg.norm_eps, dtype=cfg.dtype)


@dataclass
class SegmentOutputs:
    """Final-layer hidden states, partitioned by segment."""

    prefix: Tensor | None
    gen: Tensor | None
    state: Tensor
    action: Tensor


@dataclass(frozen=True)
class KVCache:
    """Per-layer keys/values (after rotary encoding) of the leading blocks."""

    keys: tuple[Tensor, ...]
    values: tuple[Tensor, ...]
    n_prefix: int
    n_gen: int
    batch: int
    config_hash: str
    weights_version: int
    gen_hidden: Tensor | None = None

    @property
    def n_cached(self) -> int:
        return self.n_prefix + self.n_gen

    @property
    def includes_gen(self) -> bool:
        return self.n_gen > 0


class MixtureOfTransformers(Module):
    """Three experts of identical depth and width sharing one attention."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        self._cfg = cfg
        self._hash = cfg.config_hash()
        self._version = 0
        self._stats: Counter[str] = Counter()
        self._stats_lock = threading.Lock()
        experts = [Expert.UND, Expert.ACT]
        if cfg.foresight:
            experts.insert(1, Expert.GEN)
        self.experts = {e.value: ExpertStack(cfg, rng) for e in experts}

    @property
    def config(self) -> ModelConfig:
        return self._cfg

    @property
    def stats(self) -> Counter[str]:
        """Snapshot of the pass counters."""
        with self._stats_lock:
            return Counter(self._stats)

    @property
    def weights_version(self) -> int:
        return self._version

    def mark_updated(self) -> None:
        """Invalidate caches built from the current weights."""
        self._version += 1

    def expert_parameter_counts(self) -> dict[str, int]:
        return {name: stack.parameter_count() for name, stack in self.experts.items()}

    # -- core ------------------------------------------------------------------

    def _heads(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.reshape(b, t, self._cfg.heads, self._cfg.head_dim).transpose(0, 2, 1, 3)

    def _attend(self, q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray) -> Tensor:
        b, h, t, hd = q.shape
        scores = ops.mul(q @ k.transpose(0, 1, 3, 2), 1.0 / math.sqrt(hd))
        probs = ops.masked_softmax(scores, mask)
        return (probs @ v).transpose(0, 2, 1, 3).reshape(b, t, h * hd)

    def _run(
        self,
        streams: list[tuple[Expert, Tensor]],
        mask: np.ndarray,
        positions: np.ndarray,
        past: KVCache | None = None,
        collect_kv: bool = False,
    ) -> tuple[list[Tensor], list[tuple[Tensor, Tensor]]]:
        cfg = self._cfg
        lengths = [x.shape[1] for _, x in streams]
        if sum(lengths) != len(positions):
            raise LayoutError(f"{sum(lengths)} tokens but {len(positions)} positions")
        cos, sin = rope_tables(positions, cfg.head_dim, cfg.rope_base)
        n_prefix_rows = sum(
            n for (e, _), n in zip(streams, lengths, strict=True) if e is Expert.UND
        )
        with self._stats_lock:
            self._stats["prefix_token_passes"] += n_prefix_rows * cfg.layers
            self._stats["forward_calls"] += 1

        xs = [x for _, x in streams]
        collected: list[tuple[Tensor, Tensor]] = []
        for li in range(cfg.layers):
            blocks = [self.experts[e.value].layers[li] for e, _ in streams]
            qs, ks, vs = [], [], []
            for blk, x in zip(blocks, xs, strict=True):
                h = blk.attn_norm(x)
                qs.append(blk.wq(h))
                ks.append(blk.wk(h))
                vs.append(blk.wv(h))
            q = ops.rope(self._heads(ops.concat(qs, axis=1)), cos, sin)
            k = ops.rope(self._heads(ops.concat(ks, axis=1)), cos, sin)
            v = self._heads(ops.concat(vs, axis=1))
            if collect_kv:
                collected.append((k, v))
            if past is not None:
                k = ops.concat([past.keys[li], k], axis=2)
                v = ops.concat([past.values[li], v], axis=2)
            attn = self._attend(q, k, v, mask)

            new_xs, start = [], 0
            for blk, x, n in zip(blocks, xs, lengths, strict=True):
                part = attn if len(xs) == 1 else attn[:, start : start + n, :]
                start += n
                x = x + blk.wo(part)
                x = x + blk.ffn(blk.ffn_norm(x))
                new_xs.append(x)
            xs = new_xs
        outs = [self.experts[e.value].final_norm(x) for (e, _), x in zip(streams, xs, strict=True)]
        return outs, collected

    @staticmethod
    def _check_tokens(name: str, x: Tensor | None, expected: int, hidden: int) -> None:
        if expected == 0:
            if x is not None and x.shape[1] != 0:
                raise LayoutError(f"layout has no {name} tokens but {x.shape[1]} were given")
            return
        if x is None or x.ndim != 3 or x.shape[1] != expected or x.shape[2] != hidden:
            got = None if x is None else x.shape
            raise LayoutError(f"{name}: expected (B, {expected}, {hidden}) tokens, got {got}")

    # -- public passes ---------------------------------------------------------

    def forward_unified(
        self,
        prefix: Tensor,
        gen_tokens: Tensor | None,
        state: Tensor,
        action_tokens: Tensor,
        layout: SegmentLayout,
        *,
        mask: np.ndarray | None = None,
        positions: np.ndarray | None = None,
    ) -> SegmentOutputs:
        """Joint pass over all segments under the blockwise mask.

        `mask` and `positions` override the defaults (used by ablation checks).
        """
        d = self._cfg.hidden
        self._check_tokens("prefix", prefix, layout.n_prefix, d)
        self._check_tokens("gen", gen_tokens, layout.n_gen, d)
        self._check_tokens("state", state, layout.n_state, d)
        self._check_tokens("action", action_tokens, layout.n_action, d)
        if layout.n_gen and Expert.GEN.value not in self.experts:
            raise LayoutError("model was built without a generation expert")

        streams = [(Expert.UND, prefix)]
        if layout.n_gen:
            streams.append((Expert.GEN, gen_tokens))
        streams.append((Expert.ACT, ops.concat([state, action_tokens], axis=1)))
        mask = build_blockwise_mask(layout) if mask is None else mask
        positions = np.arange(layout.total) if positions is None else positions
        outs, _ = self._run(streams, mask, positions)

        gen = outs[1] if layout.n_gen else None
        act = outs[-1]
        return SegmentOutputs(
            prefix=outs[0],
            gen=gen,
            state=act[:, : layout.n_state, :],
            action=act[:, layout.n_state :, :],
        )

    def forward_prefix(self, prefix: Tensor) -> tuple[Tensor, KVCache]:
        """Prefix-only pass; returns its hidden states and a cache of its K/V."""
        n = prefix.shape[1]
        self._check_tokens("prefix", prefix, n, self._cfg.hidden)
        mask = np.ones((n, n), dtype=bool)
        outs, kv = self._run([(Expert.UND, prefix)], mask, np.arange(n), collect_kv=True)
        cache = KVCache(
            keys=tuple(stop_gradient(k) for k, _ in kv),
            values=tuple(stop_gradient(v) for _, v in kv),
            n_prefix=n,
            n_gen=0,
            batch=prefix.shape[0],
            config_hash=self._hash,
            weights_version=self._version,
        )
        return outs[0], cache

    def _check_cache(self, cache: KVCache, batch: int) -> None:
        if cache.config_hash != self._hash or cache.weights_version != self._version:
            raise StaleCacheError(
                f"cache built for config {cache.config_hash} v{cache.weights_version}, "
                f"model is {self._hash} v{self._version}"
            )
        if cache.batch != batch:
            raise ShapeMismatchError(f"cache batch {cache.batch} != input batch {batch}")

    def extend_cache(self, cache: KVCache, gen_tokens: Tensor) -> KVCache:
        """Run the generation block once against the cached prefix and cache it too."""
        if cache.includes_gen:
            raise LayoutError("cache already holds a generation block")
        n_gen = gen_tokens.shape[1]
        self._check_cache(cache, gen_tokens.shape[0])
        self._check_tokens("gen", gen_tokens, n_gen, self._cfg.hidden)
        layout = SegmentLayout(n_prefix=cache.n_prefix, n_gen=n_gen, n_state=1, n_action=1)
        n_prefix = cache.n_prefix
        mask = build_blockwise_mask(layout)[n_prefix : n_prefix + n_gen, : n_prefix + n_gen]
        positions = np.arange(n_prefix, n_prefix + n_gen)
        outs, kv = self._run(
            [(Expert.GEN, gen_tokens)], mask, positions, past=cache, collect_kv=True
        )
        pairs = list(zip(cache.keys, cache.values, kv, strict=True))
        return KVCache(
            keys=tuple(stop_gradient(ops.concat([pk, k], axis=2)) for pk, _, (k, _) in pairs),
            values=tuple(stop_gradient(ops.concat([pv, v], axis=2)) for _, pv, (_, v) in pairs),
            n_prefix=cache.n_prefix,
            n_gen=n_gen,
            batch=cache.batch,
            config_hash=cache.config_hash,
            weights_version=cache.weights_version,
            gen_hidden=stop_gradient(outs[0]),
        )

    def forward_with_cache(
        self,
        cache: KVCache,
        gen_tokens: Tensor | None,
        state: Tensor,
        action_tokens: Tensor | None,
    ) -> SegmentOutputs:
        """Same outputs as `forward_unified` for every non-prefix segment."""
        if action_tokens is None or action_tokens.ndim != 3 or action_tokens.shape[1] == 0:
            raise LayoutError("action block is empty")
        self._check_cache(cache, state.shape[0])
        if cache.includes_gen and gen_tokens is not None:
            raise LayoutError("generation block is already cached")
        if cache.includes_gen:
            n_gen = cache.n_gen
        else:
            n_gen = 0 if gen_tokens is None else gen_tokens.shape[1]
        layout = SegmentLayout(
            n_prefix=cache.n_prefix,
            n_gen=n_gen,
            n_state=state.shape[1],
            n_action=action_tokens.shape[1],
        )
        d = self._cfg.hidden
        self._check_tokens("state", state, layout.n_state, d)
        self._check_tokens("action", action_tokens, layout.n_action, d)

        streams: list[tuple[Expert, Tensor]] = []
        if not cache.includes_gen and n_gen:
            self._check_tokens("gen", gen_tokens, n_gen, d)
            streams.append((Expert.GEN, gen_tokens))
        streams.append((Expert.ACT, ops.concat([state, action_tokens], axis=1)))
        first = cache.n_cached
        mask = build_blockwise_mask(layout)[first:, :]
        positions = np.arange(first, layout.total)
        outs, _ = self._run(streams, mask, positions, past=cache)

        gen = cache.gen_hidden if cache.includes_gen else (outs[0] if n_gen else None)
        act = outs[-1]
        return SegmentOutputs(
            prefix=None,
            gen=gen,
            state=act[:, : layout.n_state, :],
            action=act[:, layout.n_state :, :],
        )
