"""Decoupled-weight-decay Adam and global-norm clipping."""

import math
from collections.abc import Mapping

import numpy as np

from conveyor_vla.numerics.tensor import Parameter


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_by_global_norm(
    grads: Mapping[str, np.ndarray], max_norm: float
) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients together so their joint norm is at most `max_norm`.

    Returns the (possibly scaled) gradients and the norm before clipping.
    """
    norm = global_norm(grads)
    if max_norm <= 0 or norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


class AdamW:
    """Adam with weight decay applied directly to the parameters."""

    def __init__(
        self,
        params: Mapping[str, Parameter],
        *,
        betas: tuple[float, float] = (0.9, 0.95),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ) -> None:
        self._params = dict(params)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.steps = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self._params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self._params.items()}

    def step(self, grads: Mapping[str, np.ndarray], lr: float) -> None:
        """One update; parameters without a gradient entry see a zero gradient."""
        self.steps += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.steps
        c2 = 1.0 - b2**self.steps
        for name, p in self._params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            m = b1 * self._m[name] + (1.0 - b1) * g
            v = b2 * self._v[name] + (1.0 - b2) * g * g
            self._m[name], self._v[name] = m, v
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.assign(p.data - lr * update - lr * self.weight_decay * p.data)
