"""Root-mean-square gradient scaling with optional global-norm clipping."""

from __future__ import annotations

import math

import numpy as np

from .tensor import NonFiniteError


def global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    return math.sqrt(total)


class RMSprop:
    """Per-parameter running mean square of gradients scales each step.

    Update: s <- rho * s + (1 - rho) * g^2; p <- p - lr * g / (sqrt(s) + eps).
    Parameters are updated in place. A non-finite gradient aborts the step,
    naming the offending tensor. ``clip_norm=None`` disables clipping.
    """

    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, rho=0.9, eps=1e-6, clip_norm: float | None = 10.0):
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.clip_norm = clip_norm
        self.ms = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient in {name}; step aborted")
        factor = 1.0
        if self.clip_norm is not None:
            norm = global_norm(grads)
            if norm > self.clip_norm:
                factor = self.clip_norm / norm
        for name, p in params.items():
            g = grads[name] if factor == 1.0 else grads[name] * factor
            s = self.ms[name]
            s *= self.rho
            s += (1.0 - self.rho) * g * g
            p -= self.lr * g / (np.sqrt(s) + self.eps)
