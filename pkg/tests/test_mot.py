"""Mixture-of-Transformers: routing, cache equivalence and expert separation."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from conveyor_vla.errors import LayoutError, StaleCacheError
from conveyor_vla.models.layout import Expert, SegmentLayout
from conveyor_vla.network import MixtureOfTransformers, route_segments
from conveyor_vla.numerics import GradTape, Tensor, check_gradients, ops

N_PREFIX, N_GEN, N_STATE, N_ACTION = 5, 2, 1, 4


@pytest.fixture
def mot(tiny_cfg):
    return MixtureOfTransformers(tiny_cfg, np.random.default_rng(0))


@pytest.fixture
def tokens(tiny_cfg):
    rng = np.random.default_rng(5)
    d = tiny_cfg.hidden

    def make(n):
        return Tensor(rng.standard_normal((2, n, d)))

    return make(N_PREFIX), make(N_GEN), make(N_STATE), make(N_ACTION)


@pytest.fixture
def layout():
    return SegmentLayout(n_prefix=N_PREFIX, n_gen=N_GEN, n_state=N_STATE, n_action=N_ACTION)


def test_route_segments(layout):
    experts = [route_segments(i, layout) for i in range(layout.total)]
    assert experts[:N_PREFIX] == [Expert.UND] * N_PREFIX
    assert experts[N_PREFIX : N_PREFIX + N_GEN] == [Expert.GEN] * N_GEN
    assert experts[N_PREFIX + N_GEN :] == [Expert.ACT] * (N_STATE + N_ACTION)


def test_experts_have_separate_equal_size_weights(mot):
    counts = mot.expert_parameter_counts()
    assert set(counts) == {"und", "gen", "act"}
    assert len(set(counts.values())) == 1
    und = mot.experts["und"].layers[0].wq.weight
    act = mot.experts["act"].layers[0].wq.weight
    assert und is not act
    assert not np.array_equal(und.data, act.data)


def test_prefix_ignores_later_blocks(mot, tokens, layout):
    prefix, gen, state, action = tokens
    out_a = mot.forward_unified(prefix, gen, state, action, layout)
    zeros = [Tensor(np.zeros_like(t.data)) for t in (gen, state, action)]
    out_b = mot.forward_unified(prefix, *zeros, layout)
    np.testing.assert_array_equal(out_a.prefix.data, out_b.prefix.data)
    # gen ignores state/action
    out_c = mot.forward_unified(prefix, gen, zeros[1], zeros[2], layout)
    np.testing.assert_array_equal(out_a.gen.data, out_c.gen.data)
    assert not np.allclose(out_a.action.data, out_c.action.data)


def test_prefix_is_bit_identical_for_any_later_content(mot, tokens, layout):
    prefix, gen, state, action = tokens
    reference = mot.forward_unified(prefix, gen, state, action, layout).prefix.data
    rng = np.random.default_rng(8)
    for _ in range(20):
        later = [Tensor(rng.standard_normal(t.shape) * 10) for t in (gen, state, action)]
        out = mot.forward_unified(prefix, *later, layout)
        np.testing.assert_array_equal(out.prefix.data, reference)


def test_forward_prefix_matches_unified_prefix(mot, tokens, layout):
    prefix, gen, state, action = tokens
    unified = mot.forward_unified(prefix, gen, state, action, layout)
    hidden, cache = mot.forward_prefix(prefix)
    np.testing.assert_allclose(hidden.data, unified.prefix.data, atol=1e-10)
    assert cache.n_prefix == N_PREFIX and not cache.includes_gen


def test_cached_pass_matches_unified(mot, tokens, layout):
    prefix, gen, state, action = tokens
    unified = mot.forward_unified(prefix, gen, state, action, layout)
    _, cache = mot.forward_prefix(prefix)
    cached = mot.forward_with_cache(cache, gen, state, action)
    np.testing.assert_allclose(cached.action.data, unified.action.data, atol=1e-10)
    np.testing.assert_allclose(cached.state.data, unified.state.data, atol=1e-10)
    np.testing.assert_allclose(cached.gen.data, unified.gen.data, atol=1e-10)


def test_extended_cache_matches_unified(mot, tokens, layout):
    prefix, gen, state, action = tokens
    unified = mot.forward_unified(prefix, gen, state, action, layout)
    _, cache = mot.forward_prefix(prefix)
    cache = mot.extend_cache(cache, gen)
    assert cache.includes_gen and cache.n_cached == N_PREFIX + N_GEN
    np.testing.assert_allclose(cache.gen_hidden.data, unified.gen.data, atol=1e-10)
    cached = mot.forward_with_cache(cache, None, state, action)
    np.testing.assert_allclose(cached.action.data, unified.action.data, atol=1e-10)


def test_cache_reuse_skips_prefix_recompute(mot, tokens):
    prefix, gen, state, action = tokens
    _, cache = mot.forward_prefix(prefix)
    cache = mot.extend_cache(cache, gen)
    before = mot.stats["prefix_token_passes"]
    for _ in range(5):
        mot.forward_with_cache(cache, None, state, action)
    assert mot.stats["prefix_token_passes"] == before


def test_stale_cache_detected(mot, tokens):
    prefix, gen, state, action = tokens
    _, cache = mot.forward_prefix(prefix)
    mot.mark_updated()
    with pytest.raises(StaleCacheError):
        mot.forward_with_cache(cache, gen, state, action)


def test_empty_action_block_rejected(mot, tokens, tiny_cfg):
    prefix, gen, state, _ = tokens
    _, cache = mot.forward_prefix(prefix)
    empty = Tensor(np.zeros((2, 0, tiny_cfg.hidden)))
    with pytest.raises(LayoutError):
        mot.forward_with_cache(cache, gen, state, empty)


def test_gen_tokens_without_gen_expert(tiny_cfg, tokens, layout):
    cfg = tiny_cfg.model_copy(update={"foresight": False})
    mot = MixtureOfTransformers(cfg, np.random.default_rng(0))
    assert set(mot.experts) == {"und", "act"}
    with pytest.raises(LayoutError):
        mot.forward_unified(*tokens, layout)


def test_prefix_loss_leaves_action_expert_untouched(mot, tokens, layout):
    prefix, gen, state, action = tokens
    with GradTape() as tape:
        out = mot.forward_unified(prefix, gen, state, action, layout)
        loss = ops.sum_(ops.square(out.prefix))
    grads = tape.backward(loss)
    und = mot.experts["und"].named_parameters()
    assert any(p.id in grads and np.any(grads[p.id].data) for p in und.values())
    for name in ("gen", "act"):
        for p in mot.experts[name].named_parameters().values():
            assert p.id not in grads or not np.any(grads[p.id].data)


def test_gradients_match_finite_differences(tiny_cfg, tokens, layout):
    cfg = tiny_cfg.model_copy(update={"init_std": 0.3})
    mot = MixtureOfTransformers(cfg, np.random.default_rng(1))
    target = np.random.default_rng(2).standard_normal((2, N_ACTION, cfg.hidden))
    params = mot.named_parameters()
    probe = {
        name: params[name]
        for name in (
            "experts.und.layers.0.wq.weight",
            "experts.gen.layers.1.wk.weight",
            "experts.act.layers.0.ffn.w_down.weight",
            "experts.act.layers.1.attn_norm.gain",
        )
    }

    def loss():
        out = mot.forward_unified(*tokens, layout)
        return ops.mse(out.action, target)

    report = check_gradients(loss, probe, coords_per_tensor=4, rng=np.random.default_rng(3))
    assert max(report.values()) < 1e-3


def test_pass_counters_are_exact_across_threads(mot, tokens, tiny_cfg):
    prefix, gen, state, action = tokens
    _, cache = mot.forward_prefix(prefix)
    cache = mot.extend_cache(cache, gen)
    before = mot.stats

    def work(i: int) -> None:
        if i % 2:
            mot.forward_prefix(prefix)
        else:
            mot.forward_with_cache(cache, None, state, action)

    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(work, range(200)))
    after = mot.stats
    assert after["forward_calls"] - before["forward_calls"] == 200
    passes = after["prefix_token_passes"] - before["prefix_token_passes"]
    assert passes == 100 * N_PREFIX * tiny_cfg.layers


def test_stats_is_a_snapshot(mot, tokens):
    snapshot = mot.stats
    mot.forward_prefix(tokens[0])
    assert mot.stats["forward_calls"] == snapshot["forward_calls"] + 1
