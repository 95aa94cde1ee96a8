"""Building blocks shared by the experts and the input/output heads."""

import numpy as np

from conveyor_vla.network.module import Module
from conveyor_vla.numerics import Parameter, Tensor, ops


class Linear(Module):
    """y = x @ W + b, W stored (in, out)."""

    def __init__(
        self,
        d_in: int,
        d_out: int,
        *,
        rng: np.random.Generator,
        std: float,
        dtype: str,
        bias: bool = True,
    ) -> None:
        self.weight = Parameter(rng.normal(0.0, std, (d_in, d_out)), dtype=dtype)
        self.bias = Parameter(np.zeros(d_out), dtype=dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Embedding(Module):
    def __init__(
        self, n: int, dim: int, *, rng: np.random.Generator, std: float, dtype: str
    ) -> None:
        self.table = Parameter(rng.normal(0.0, std, (n, dim)), dtype=dtype)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return ops.take_rows(self.table, ids)


class RMSNorm(Module):
    def __init__(self, dim: int, *, eps: float, dtype: str) -> None:
        self.gain = Parameter(np.ones(dim), dtype=dtype)
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.rms_norm(x, self.gain, self._eps)


class FeedForward(Module):
    """Gated SiLU feed-forward: (silu(x Wg) * x Wu) Wd."""

    def __init__(
        self,
        dim: int,
        hidden: int,
        *,
        rng: np.random.Generator,
        std: float,
        out_std: float,
        dtype: str,
    ) -> None:
        self.w_gate = Linear(dim, hidden, rng=rng, std=std, dtype=dtype, bias=False)
        self.w_up = Linear(dim, hidden, rng=rng, std=std, dtype=dtype, bias=False)
        self.w_down = Linear(hidden, dim, rng=rng, std=out_std, dtype=dtype, bias=False)

    def __call__(self, x: Tensor) -> Tensor:
        return self.w_down(ops.mul(ops.silu(self.w_gate(x)), self.w_up(x)))


def rope_tables(positions: np.ndarray, head_dim: int, base: float) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables (T, head_dim) in the rotate-half layout."""
    inv_freq = base ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    angles = np.concatenate([angles, angles], axis=-1)
    return np.cos(angles), np.sin(angles)


def sinusoidal_features(
    values: np.ndarray, dim: int, min_period: float = 4e-3, max_period: float = 4.0
) -> np.ndarray:
    """Sine-cosine features of scalars in [0, 1], shape (N, dim)."""
    fraction = np.linspace(0.0, 1.0, dim // 2)
    period = min_period * (max_period / min_period) ** fraction
    angles = 2.0 * np.pi * np.asarray(values, dtype=np.float64)[:, None] / period[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
