"""Latent tokenizers and the compress / pool / decompress head."""

import numpy as np
import pytest

from conveyor_vla.errors import LayoutError, ShapeMismatchError
from conveyor_vla.foresight import (
    AnalyticTokenizer,
    ForesightHead,
    LearnedTokenizer,
    build_tokenizer,
    dct_basis,
    gen_loss,
    patchify,
    unpatchify,
)
from conveyor_vla.foresight.tokenizer import dct_frequencies
from conveyor_vla.models.training import TokenizerMode
from conveyor_vla.numerics import GradTape, Parameter, Tensor, check_gradients, ops


def _smooth_frames(n: int, size: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size] / size
    frames = []
    for _ in range(n):
        a, b, c = rng.uniform(0.2, 0.8, 3)
        frames.append(a + 0.2 * np.sin(2 * np.pi * (b * x + c * y)))
    return np.stack(frames)


class TestAnalyticTokenizer:
    def test_basis_is_orthonormal(self):
        basis = dct_basis(6)
        assert basis.shape == (64, 6)
        np.testing.assert_allclose(basis.T @ basis, np.eye(6), atol=1e-12)

    def test_frequencies_start_at_dc(self):
        assert dct_frequencies(4) == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_patchify_round_trip(self, rng):
        images = rng.random((2, 3, 16, 16))
        patches = patchify(images, 16)
        assert patches.shape == (2, 3, 2, 2, 64)
        np.testing.assert_array_equal(unpatchify(patches), images)
        np.testing.assert_array_equal(patches[0, 0, 1, 0].reshape(8, 8), images[0, 0, 8:16, 0:8])

    def test_patchify_rejects_wrong_size(self):
        with pytest.raises(ShapeMismatchError):
            patchify(np.zeros((3, 12, 12)), 16)

    def test_latent_grid_shape_and_span_reconstruction(self, rng):
        tok = AnalyticTokenizer(16, channels=4)
        grid = rng.standard_normal((3, 2, 2, 4))
        images = tok.decode(grid)
        assert images.shape == (3, 16, 16)
        np.testing.assert_allclose(tok.encode(images), grid, atol=1e-12)
        assert tok.residual_energy(images) == pytest.approx(0.0, abs=1e-9)

    def test_constant_image_is_exact(self):
        tok = AnalyticTokenizer(16, channels=1)
        image = np.full((16, 16), 0.4)
        np.testing.assert_allclose(tok.decode(tok.encode(image)), image, atol=1e-12)

    def test_decode_rejects_channel_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            AnalyticTokenizer(16, channels=4).decode(np.zeros((2, 2, 3)))

    def test_digest_depends_on_basis(self):
        assert AnalyticTokenizer(16, 4).digest() == AnalyticTokenizer(32, 4).digest()
        assert AnalyticTokenizer(16, 4).digest() != AnalyticTokenizer(16, 5).digest()

    def test_basis_is_read_only(self):
        with pytest.raises(ValueError):
            AnalyticTokenizer(16, 4).basis[0, 0] = 1.0


class TestLearnedTokenizer:
    def test_fit_reduces_error_and_freezes(self):
        frames = _smooth_frames(16, 16)
        tok = LearnedTokenizer(16, 4, hidden=16, seed=0, dtype="float64")
        before = float(np.mean((tok.decode(tok.encode(frames)) - frames) ** 2))
        tok.fit(frames, steps=150, batch=32, lr=3e-3)
        after = float(np.mean((tok.decode(tok.encode(frames)) - frames) ** 2))
        assert after < 0.5 * before
        assert tok.frozen
        with pytest.raises(RuntimeError):
            tok.fit(frames, steps=1)

    def test_encode_tensor_matches_encode(self, rng):
        tok = LearnedTokenizer(16, 4, hidden=8, seed=1, dtype="float64")
        images = rng.random((2, 16, 16))
        np.testing.assert_allclose(tok.encode_tensor(Tensor(images)).data, tok.encode(images))

    def test_build_tokenizer_mode(self, tiny_cfg):
        assert isinstance(build_tokenizer(tiny_cfg), AnalyticTokenizer)
        learned = tiny_cfg.model_copy(update={"tokenizer_mode": TokenizerMode.LEARNED})
        assert isinstance(build_tokenizer(learned), LearnedTokenizer)


class TestForesightHead:
    def test_shapes(self, tiny_cfg, rng):
        head = ForesightHead(tiny_cfg, np.random.default_rng(0))
        grids = rng.standard_normal((6, 2, 2, 4))
        tokens = head.compress_tokens(grids)
        assert tokens.shape == (6, 1, tiny_cfg.hidden)
        hidden = Tensor(rng.standard_normal((2, 2 * 3, tiny_cfg.hidden)))
        pooled = head.pool_time(hidden)
        assert pooled.shape == (2, 3, tiny_cfg.hidden)
        assert head.decompress_views(pooled).shape == (2, 3, 2, 2, 4)

    def test_pool_time_is_mean_of_groups(self, tiny_cfg, rng):
        head = ForesightHead(tiny_cfg, np.random.default_rng(0))
        data = rng.standard_normal((1, 6, tiny_cfg.hidden))
        pooled = head.pool_time(Tensor(data)).data
        np.testing.assert_allclose(pooled, 0.5 * (data[:, :3] + data[:, 3:]))

    def test_pool_time_rejects_single_group(self, tiny_cfg):
        head = ForesightHead(tiny_cfg, np.random.default_rng(0))
        with pytest.raises(LayoutError):
            head.pool_time(Tensor(np.zeros((1, 3, tiny_cfg.hidden))))

    def test_compress_rejects_wrong_grid(self, tiny_cfg):
        head = ForesightHead(tiny_cfg, np.random.default_rng(0))
        with pytest.raises(ShapeMismatchError):
            head.compress_tokens(np.zeros((1, 4, 4, 4)))

    def test_pseudo_inverse_round_trip_is_exact_when_wide_enough(self, tiny_cfg, rng):
        cfg = tiny_cfg.model_copy(update={"compress_channels": 16})
        head = ForesightHead(cfg, np.random.default_rng(0))
        grids = rng.standard_normal((5, 2, 2, 4))
        assert head.round_trip_error(grids) < 1e-20

    def test_pseudo_inverse_round_trip_is_a_projection(self, tiny_cfg, rng):
        head = ForesightHead(tiny_cfg, np.random.default_rng(0))
        grids = rng.standard_normal((5, 2, 2, 4))
        assert head.round_trip_error(grids) <= float(np.mean(grids**2)) + 1e-12

    def test_decompress_decode_images(self, tiny_cfg, rng):
        head = ForesightHead(tiny_cfg, np.random.default_rng(0))
        pooled = Tensor(rng.standard_normal((2, 3, tiny_cfg.hidden)))
        z_hat, images = head.decompress_decode(pooled, AnalyticTokenizer(16, 4))
        assert z_hat.shape == (2, 3, 2, 2, 4)
        assert images.shape == (2, 3, 16, 16)

    def test_gen_loss_never_updates_target(self, rng):
        pred = Parameter(rng.standard_normal((2, 3)))
        target = Parameter(rng.standard_normal((2, 3)))
        with GradTape() as tape:
            loss = gen_loss(pred, target)
        grads = tape.backward(loss)
        assert target.id not in grads
        np.testing.assert_allclose(grads[pred.id].data, 2.0 * (pred.data - target.data) / 6)

    def test_gen_loss_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            gen_loss(Tensor(np.zeros((2, 3))), np.zeros((3, 2)))

    def test_head_gradients(self, tiny_cfg, rng):
        head = ForesightHead(tiny_cfg, np.random.default_rng(0), pinv_init=False)
        grids = rng.standard_normal((3, 2, 2, 4))
        target = rng.standard_normal((1, 3, 2, 2, 4))

        def loss():
            tokens = head.compress_tokens(grids).reshape(1, 3, tiny_cfg.hidden)
            pooled = head.pool_time(ops.concat([tokens, ops.tanh(tokens)], axis=1))
            return gen_loss(head.decompress_views(pooled), target)

        params = head.named_parameters()
        report = check_gradients(loss, params, coords_per_tensor=5, rng=np.random.default_rng(1))
        assert max(report.values()) < 1e-4
