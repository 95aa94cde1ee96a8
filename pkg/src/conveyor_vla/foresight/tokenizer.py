"""Frozen image tokenizers for the generation pathway.

The analytic tokenizer projects every 8x8 pixel patch onto the lowest-frequency
2-D DCT basis vectors; it needs no training and its decoder is the transpose of
its encoder. The learned tokenizer is a small patch autoencoder that is fit on
frames once and then frozen.
"""

import hashlib
import logging
from typing import Protocol

import numpy as np

from conveyor_vla.errors import ShapeMismatchError
from conveyor_vla.models.training import LATENT_DOWNSAMPLE, ModelConfig, TokenizerMode
from conveyor_vla.network.layers import Linear
from conveyor_vla.network.module import Module
from conveyor_vla.numerics import AdamW, GradTape, Tensor, ops

logger = logging.getLogger(__name__)

PATCH = LATENT_DOWNSAMPLE


class LatentTokenizer(Protocol):
    channels: int

    def encode(self, images: np.ndarray) -> np.ndarray: ...

    def decode(self, grid: np.ndarray) -> np.ndarray: ...

    def digest(self) -> str: ...


def patchify(images: np.ndarray, image_size: int) -> np.ndarray:
    """(..., H, W) -> (..., G, G, 64)."""
    if images.shape[-2:] != (image_size, image_size):
        raise ShapeMismatchError(
            f"expected {image_size}x{image_size} images, got {images.shape[-2:]}"
        )
    g = image_size // PATCH
    lead = images.shape[:-2]
    x = images.reshape(*lead, g, PATCH, g, PATCH)
    x = np.moveaxis(x, -3, -2)
    return x.reshape(*lead, g, g, PATCH * PATCH)


def unpatchify(patches: np.ndarray) -> np.ndarray:
    """(..., G, G, 64) -> (..., H, W)."""
    lead = patches.shape[:-3]
    g = patches.shape[-2]
    x = patches.reshape(*lead, g, g, PATCH, PATCH)
    x = np.moveaxis(x, -2, -3)
    return x.reshape(*lead, g * PATCH, g * PATCH)


def dct_frequencies(channels: int) -> list[tuple[int, int]]:
    """Lowest `channels` (row, col) frequencies, ordered by (u+v, max(u,v), u)."""
    freqs = [(u, v) for u in range(PATCH) for v in range(PATCH)]
    freqs.sort(key=lambda f: (f[0] + f[1], max(f), f[0]))
    return freqs[:channels]


def dct_basis(channels: int) -> np.ndarray:
    """Orthonormal columns (64, channels) of the 2-D DCT-II basis."""
    x = np.arange(PATCH)
    scale = np.sqrt(np.where(np.arange(PATCH) == 0, 1.0, 2.0) / PATCH)
    one_d = scale[:, None] * np.cos(np.pi * np.outer(np.arange(PATCH), 2 * x + 1) / (2 * PATCH))
    cols = [np.outer(one_d[u], one_d[v]).reshape(-1) for u, v in dct_frequencies(channels)]
    return np.stack(cols, axis=1)


class AnalyticTokenizer:
    """Per-patch projection onto a fixed DCT subspace."""

    def __init__(self, image_size: int, channels: int = 4) -> None:
        self.image_size = image_size
        self.channels = channels
        self._basis = dct_basis(channels)
        self._basis.flags.writeable = False

    @property
    def basis(self) -> np.ndarray:
        return self._basis

    def encode(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images)
        return patchify(images, self.image_size) @ self._basis.astype(images.dtype, copy=False)

    def decode(self, grid: np.ndarray) -> np.ndarray:
        grid = np.asarray(grid)
        if grid.shape[-1] != self.channels:
            raise ShapeMismatchError(
                f"expected {self.channels} latent channels, got {grid.shape[-1]}"
            )
        return unpatchify(grid @ self._basis.T.astype(grid.dtype, copy=False))

    def residual_energy(self, images: np.ndarray) -> float:
        """Squared norm of the part of `images` outside the basis span."""
        p = patchify(np.asarray(images, dtype=np.float64), self.image_size)
        return float(np.sum(p * p) - np.sum((p @ self._basis) ** 2))

    def digest(self) -> str:
        return hashlib.sha256(self._basis.tobytes()).hexdigest()


class LearnedTokenizer(Module):
    """Patch autoencoder; frozen once fit."""

    def __init__(
        self,
        image_size: int,
        channels: int,
        *,
        hidden: int = 32,
        seed: int = 0,
        dtype: str = "float32",
    ) -> None:
        rng = np.random.default_rng(seed)
        d = PATCH * PATCH
        self.image_size = image_size
        self.channels = channels
        self.enc1 = Linear(d, hidden, rng=rng, std=1.0 / np.sqrt(d), dtype=dtype)
        self.enc2 = Linear(hidden, channels, rng=rng, std=1.0 / np.sqrt(hidden), dtype=dtype)
        self.dec1 = Linear(channels, hidden, rng=rng, std=1.0 / np.sqrt(channels), dtype=dtype)
        self.dec2 = Linear(hidden, d, rng=rng, std=1.0 / np.sqrt(hidden), dtype=dtype)
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> None:
        self._frozen = True

    def encode_tensor(self, images: Tensor) -> Tensor:
        """Differentiable encoder on (N, H, W) images (fitting and gradient tests)."""
        patches = _patchify_tensor(images, self.image_size)
        return self.enc2(ops.silu(self.enc1(patches)))

    def decode_tensor(self, grid: Tensor) -> Tensor:
        return self.dec2(ops.silu(self.dec1(grid)))

    def encode(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=self.enc1.weight.dtype)
        patches = Tensor(patchify(images, self.image_size))
        return self.enc2(ops.silu(self.enc1(patches))).data

    def decode(self, grid: np.ndarray) -> np.ndarray:
        out = self.decode_tensor(Tensor(np.asarray(grid, dtype=self.enc1.weight.dtype)))
        return unpatchify(out.data)

    def fit(
        self,
        frames: np.ndarray,
        *,
        steps: int = 500,
        batch: int = 64,
        lr: float = 3e-3,
        seed: int = 0,
    ) -> float:
        """Fit on (N, H, W) frames, freeze, and return the final reconstruction MSE."""
        if self._frozen:
            raise RuntimeError("tokenizer is frozen")
        rng = np.random.default_rng(seed)
        params = self.named_parameters()
        opt = AdamW(params, betas=(0.9, 0.999), weight_decay=0.0)
        patches = patchify(np.asarray(frames, dtype=self.enc1.weight.dtype), self.image_size)
        patches = patches.reshape(-1, PATCH * PATCH)
        loss_value = float("nan")
        for step in range(steps):
            idx = rng.integers(0, len(patches), size=min(batch, len(patches)))
            x = Tensor(patches[idx])
            with GradTape() as tape:
                recon = self.dec2(ops.silu(self.dec1(self.enc2(ops.silu(self.enc1(x))))))
                loss = ops.mse(recon, x)
            grads = tape.backward(loss)
            opt.step({n: grads[p.id].data for n, p in params.items() if p.id in grads}, lr)
            loss_value = loss.item()
            if step % 100 == 0:
                logger.debug("tokenizer fit step %d mse %.5f", step, loss_value)
        self.freeze()
        logger.info("Learned tokenizer fit: %d steps, final mse %.5f", steps, loss_value)
        return loss_value

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.state().items():
            h.update(name.encode())
            h.update(arr.tobytes())
        return h.hexdigest()


def _patchify_tensor(images: Tensor, image_size: int) -> Tensor:
    g = image_size // PATCH
    lead = images.shape[:-2]
    x = images.reshape(*lead, g, PATCH, g, PATCH)
    n = len(lead)
    axes = (*range(n), n, n + 2, n + 1, n + 3)
    return x.transpose(*axes).reshape(*lead, g, g, PATCH * PATCH)


def build_tokenizer(cfg: ModelConfig) -> AnalyticTokenizer | LearnedTokenizer:
    if cfg.tokenizer_mode is TokenizerMode.LEARNED:
        return LearnedTokenizer(cfg.image_size, cfg.latent_channels, seed=cfg.seed, dtype=cfg.dtype)
    return AnalyticTokenizer(cfg.image_size, cfg.latent_channels)
