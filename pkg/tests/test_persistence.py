import json

import numpy as np
import pytest

from conveyor_vla.errors import FormatError, IncompatibleCheckpointError
from conveyor_vla.models.episode import EpisodeRecord, NormStats
from conveyor_vla.network.policy import UnifiedPolicy
from conveyor_vla.persistence import (
    Checkpoint,
    check_compatible,
    load_checkpoint,
    load_episode,
    load_manifest,
    save_checkpoint,
    save_episode,
    save_manifest,
)
from conveyor_vla.persistence.codec import write_preamble, write_tensor
from conveyor_vla.persistence.episode_store import EPISODE_MAGIC

NORM = NormStats(
    action_min=[-0.03, -0.03, -1.0],
    action_max=[0.03, 0.03, 1.0],
    proprio_min=[0.0, 0.0, -1.0],
    proprio_max=[1.0, 1.0, 1.0],
)


def small_record(rng: np.random.Generator, steps: int = 4) -> EpisodeRecord:
    return EpisodeRecord(
        instruction=np.array([1, 2, 6, 3, 4, 5, 10], dtype=np.float32),
        frames=rng.random((steps, 3, 8, 8)).astype(np.float32),
        proprio=rng.random((steps, 3)).astype(np.float32),
        actions=rng.uniform(-1, 1, (steps, 3)).astype(np.float32),
        success=True,
    )


class TestEpisodes:
    def test_round_trip(self, tmp_path, rng):
        record = small_record(rng)
        save_episode(record, tmp_path / "ep.bin")
        assert load_episode(tmp_path / "ep.bin") == record

    def test_generated_episode_reloads(self, store, tmp_path):
        record = store.get(0)
        save_episode(record, tmp_path / "copy.bin")
        assert load_episode(tmp_path / "copy.bin") == record

    def test_bad_magic(self, tmp_path, rng):
        path = tmp_path / "ep.bin"
        save_episode(small_record(rng), path)
        data = bytearray(path.read_bytes())
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="magic"):
            load_episode(path)

    def test_truncated(self, tmp_path, rng):
        path = tmp_path / "ep.bin"
        save_episode(small_record(rng), path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(FormatError, match="truncated"):
            load_episode(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "ep.bin"
        with path.open("wb") as f:
            write_preamble(f, EPISODE_MAGIC, 99)
        with pytest.raises(FormatError, match="version"):
            load_episode(path)

    def test_duplicate_tensor(self, tmp_path):
        path = tmp_path / "ep.bin"
        with path.open("wb") as f:
            write_preamble(f, EPISODE_MAGIC, 1)
            write_tensor(f, "frames", np.zeros((1, 1, 2, 2)))
            write_tensor(f, "frames", np.zeros((1, 1, 2, 2)))
        with pytest.raises(FormatError, match="duplicate"):
            load_episode(path)

    def test_missing_tensor(self, tmp_path):
        path = tmp_path / "ep.bin"
        with path.open("wb") as f:
            write_preamble(f, EPISODE_MAGIC, 1)
            write_tensor(f, "frames", np.zeros((1, 1, 2, 2)))
        with pytest.raises(FormatError, match="missing"):
            load_episode(path)

    def test_inconsistent_lengths(self, tmp_path):
        path = tmp_path / "ep.bin"
        with path.open("wb") as f:
            write_preamble(f, EPISODE_MAGIC, 1)
            write_tensor(f, "frames", np.zeros((3, 1, 2, 2)))
            write_tensor(f, "proprio", np.zeros((2, 3)))
            write_tensor(f, "actions", np.zeros((3, 3)))
            write_tensor(f, "instruction", np.zeros(2))
            write_tensor(f, "success", np.ones(1))
        with pytest.raises(FormatError):
            load_episode(path)


class TestManifest:
    def test_round_trip(self, store, tmp_path):
        save_manifest(store.manifest, tmp_path)
        assert load_manifest(tmp_path) == store.manifest
        assert load_manifest(tmp_path / "manifest.json") == store.manifest

    def test_unknown_format_version(self, store, tmp_path):
        data = store.manifest.model_dump(mode="json")
        data["format_version"] = 99
        (tmp_path / "manifest.json").write_text(json.dumps(data))
        with pytest.raises(FormatError):
            load_manifest(tmp_path)

    def test_store_bounds(self, store):
        with pytest.raises(IndexError):
            store.get(len(store))
        assert store.get(0) is store.get(0)


class TestCheckpoint:
    def test_round_trip(self, tiny_cfg, tmp_path):
        policy = UnifiedPolicy(tiny_cfg)
        ckpt = Checkpoint(
            model=tiny_cfg,
            params=policy.state(),
            norm_stats=NORM,
            tokenizer_params={"encoder.weight": np.ones((2, 2))},
            meta={"step": 7, "stage": "pretrain"},
        )
        path = save_checkpoint(ckpt, tmp_path / "run" / "ckpt.ia1w")
        assert not path.with_suffix(".ia1w.tmp").exists()

        loaded = load_checkpoint(path)
        assert loaded.model == tiny_cfg
        assert loaded.norm_stats == NORM
        assert loaded.meta == {"step": 7, "stage": "pretrain"}
        assert set(loaded.params) == set(ckpt.params)
        assert set(loaded.tokenizer_params) == {"encoder.weight"}
        for name, value in ckpt.params.items():
            np.testing.assert_allclose(loaded.params[name], value, rtol=1e-6, atol=1e-7)

    def test_reload_into_fresh_policy(self, tiny_cfg, tmp_path):
        source = UnifiedPolicy(tiny_cfg)
        path = save_checkpoint(Checkpoint(tiny_cfg, source.state(), NORM), tmp_path / "c.ia1w")
        target = UnifiedPolicy(tiny_cfg.model_copy(update={"seed": 99}))
        target.load_state(load_checkpoint(path).params)
        for name, p in target.named_parameters().items():
            np.testing.assert_allclose(p.data, source.state()[name], rtol=1e-6, atol=1e-7)

    def test_wrong_magic(self, tmp_path, rng):
        path = tmp_path / "ep.bin"
        save_episode(small_record(rng), path)
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)

    def test_compatible(self, env_cfg):
        check_compatible(Checkpoint(env_cfg, {}, NORM), image_size=64, n_views=3, action_dim=3)

    def test_incompatible_observation_space(self, tiny_cfg):
        with pytest.raises(IncompatibleCheckpointError, match="image_size"):
            check_compatible(Checkpoint(tiny_cfg, {}, NORM), image_size=64, n_views=3, action_dim=3)

    def test_missing_norm_stats(self, env_cfg):
        with pytest.raises(IncompatibleCheckpointError, match="normalization"):
            check_compatible(Checkpoint(env_cfg, {}), image_size=64, n_views=3, action_dim=3)


class TestNormStats:
    def test_actions_round_trip(self, rng):
        actions = rng.uniform(-0.03, 0.03, (5, 3))
        restored = NORM.denormalize_actions(NORM.normalize_actions(actions))
        np.testing.assert_allclose(restored, actions)

    def test_range_maps_to_unit_interval(self):
        scaled = NORM.normalize_actions(np.array([[-0.03, 0.03, 0.0]]))
        np.testing.assert_allclose(scaled, [[-1.0, 1.0, 0.0]])

    def test_degenerate_range_is_safe(self):
        flat = NormStats(action_min=[0.0], action_max=[0.0], proprio_min=[0.0], proprio_max=[0.0])
        assert np.isfinite(flat.normalize_actions(np.array([0.0]))).all()

    def test_merge_takes_union(self):
        other = NORM.model_copy(update={"action_max": [0.05, 0.01, 1.0]})
        merged = NormStats.merge([NORM, other])
        assert merged.action_max == [0.05, 0.03, 1.0]
        assert merged.action_min == NORM.action_min
