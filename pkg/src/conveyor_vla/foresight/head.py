"""Spatial compression, pooling over time and decompression of foresight latents."""

import logging

import numpy as np

from conveyor_vla.errors import LayoutError, ShapeMismatchError
from conveyor_vla.models.training import ModelConfig
from conveyor_vla.network.layers import Linear
from conveyor_vla.network.module import Module
from conveyor_vla.numerics import Tensor, ops, stop_gradient

logger = logging.getLogger(__name__)

TIME_GROUPS = 2


class ForesightHead(Module):
    """Latent grid (G x G x C) <-> P x P hidden-width tokens per image.

    The strided convolution with kernel = stride = G/P is a per-window linear
    map, so it is expressed as a window flatten followed by `Linear`. The
    transposed convolution is the mirror image: `Linear` then window unflatten.
    """

    def __init__(
        self, cfg: ModelConfig, rng: np.random.Generator, *, pinv_init: bool = True
    ) -> None:
        self._cfg = cfg
        k, c, cc, d = cfg.compress_kernel, cfg.latent_channels, cfg.compress_channels, cfg.hidden
        self.conv = Linear(k * k * c, cc, rng=rng, std=1.0 / np.sqrt(k * k * c), dtype=cfg.dtype)
        self.proj_in = Linear(cc, d, rng=rng, std=1.0 / np.sqrt(cc), dtype=cfg.dtype)
        self.proj_out = Linear(d, cc, rng=rng, std=1.0 / np.sqrt(d), dtype=cfg.dtype)
        self.deconv = Linear(cc, k * k * cc, rng=rng, std=1.0 / np.sqrt(cc), dtype=cfg.dtype)
        self.to_latent = Linear(cc, c, rng=rng, std=1.0 / np.sqrt(cc), dtype=cfg.dtype)
        if pinv_init:
            self.init_pseudo_inverse()

    @property
    def tokens_per_image(self) -> int:
        return self._cfg.latent_tokens_side**2

    def init_pseudo_inverse(self) -> None:
        """Set the decompression path to the pseudo-inverse of the compression path."""
        cfg = self._cfg
        k, c, cc = cfg.compress_kernel, cfg.latent_channels, cfg.compress_channels
        if cc < c or cc > cfg.hidden:
            logger.warning(
                "pseudo-inverse init skipped: need C <= Cc <= hidden, got %d/%d/%d",
                c,
                cc,
                cfg.hidden,
            )
            return
        self.proj_out.weight.assign(np.linalg.pinv(self.proj_in.weight.data.astype(np.float64)))
        self.proj_out.bias.assign(np.zeros(cc))
        conv_pinv = np.linalg.pinv(self.conv.weight.data.astype(np.float64))  # (Cc, k*k*C)
        deconv = np.zeros((cc, k * k * cc))
        for pos in range(k * k):
            deconv[:, pos * cc : pos * cc + c] = conv_pinv[:, pos * c : (pos + 1) * c]
        self.deconv.weight.assign(deconv)
        self.deconv.bias.assign(np.zeros(k * k * cc))
        self.to_latent.weight.assign(np.eye(cc, c))
        self.to_latent.bias.assign(np.zeros(c))

    def _check_grid(self, grid: Tensor) -> None:
        g, c = self._cfg.latent_grid, self._cfg.latent_channels
        if grid.ndim < 3 or grid.shape[-3:] != (g, g, c):
            raise ShapeMismatchError(
                f"expected latent grids (..., {g}, {g}, {c}), got {grid.shape}"
            )

    def compress_tokens(self, grid: Tensor | np.ndarray) -> Tensor:
        """(N, G, G, C) -> (N, P*P, hidden)."""
        grid = ops.as_tensor(grid)
        self._check_grid(grid)
        cfg = self._cfg
        n, p, k, c = grid.shape[0], cfg.latent_tokens_side, cfg.compress_kernel, cfg.latent_channels
        windows = grid.reshape(n, p, k, p, k, c).transpose(0, 1, 3, 2, 4, 5)
        windows = windows.reshape(n, p * p, k * k * c)
        return self.proj_in(self.conv(windows))

    def pool_time(self, hidden: Tensor) -> Tensor:
        """(B, 2 * V * P*P, D) -> (B, V * P*P, D): mean of the two timestamp groups."""
        b, n_tokens, d = hidden.shape
        per_group = self._cfg.n_views * self.tokens_per_image
        if n_tokens % per_group or n_tokens // per_group != TIME_GROUPS:
            raise LayoutError(
                f"generation block must hold {TIME_GROUPS} timestamp groups of {per_group} tokens, "
                f"got {n_tokens} tokens"
            )
        return hidden.reshape(b, TIME_GROUPS, per_group, d).mean(axis=1)

    def decompress(self, tokens: Tensor) -> Tensor:
        """(N, P*P, D) -> (N, G, G, C)."""
        cfg = self._cfg
        p, k, cc = cfg.latent_tokens_side, cfg.compress_kernel, cfg.compress_channels
        if tokens.ndim != 3 or tokens.shape[1:] != (p * p, cfg.hidden):
            raise ShapeMismatchError(
                f"expected (N, {p * p}, {cfg.hidden}) tokens, got {tokens.shape}"
            )
        n = tokens.shape[0]
        windows = self.deconv(self.proj_out(tokens))
        g = p * k
        y = windows.reshape(n, p, p, k, k, cc).transpose(0, 1, 3, 2, 4, 5).reshape(n, g, g, cc)
        return self.to_latent(y)

    def decompress_views(self, pooled: Tensor) -> Tensor:
        """(B, V * P*P, D) -> (B, V, G, G, C)."""
        cfg = self._cfg
        b = pooled.shape[0]
        per_image = self.tokens_per_image
        if pooled.ndim != 3 or pooled.shape[1] != cfg.n_views * per_image:
            raise ShapeMismatchError(
                f"expected (B, {cfg.n_views * per_image}, {cfg.hidden}) pooled tokens, "
                f"got {pooled.shape}"
            )
        g, c = cfg.latent_grid, cfg.latent_channels
        grids = self.decompress(pooled.reshape(b * cfg.n_views, per_image, cfg.hidden))
        return grids.reshape(b, cfg.n_views, g, g, c)

    def decompress_decode(self, pooled: Tensor, tokenizer) -> tuple[Tensor, np.ndarray]:
        """Predicted latent grids and their decoded images (B, V, H, W)."""
        z_hat = self.decompress_views(pooled)
        return z_hat, tokenizer.decode(z_hat.data)

    def round_trip_error(self, grids: np.ndarray) -> float:
        """Mean squared error of decompress(compress(grids)), no pooling."""
        grids = np.asarray(grids, dtype=self.conv.weight.dtype)
        recon = self.decompress(self.compress_tokens(grids)).data
        return float(np.mean((recon - grids) ** 2))


def gen_loss(z_hat: Tensor, target: Tensor | np.ndarray) -> Tensor:
    """MSE between predicted and target latents; the target never receives gradient."""
    target = stop_gradient(target)
    if z_hat.shape != target.shape:
        raise ShapeMismatchError(f"prediction {z_hat.shape} vs target {target.shape}")
    return ops.mse(z_hat, target)
