"""Gated recurrent cell with backward-through-time over stacked step caches.

Gate layout: update gate z and reset gate r are sigmoids of input and recurrent
projections; the candidate applies the reset gate inside its recurrent term;
the new state mixes as h = (1 - z) * h_prev + z * candidate. Weight gradients
accumulate across steps, which is exactly the shared-parameter sum an unrolled
sequence needs.
"""

from __future__ import annotations

import numpy as np

from . import config
from .layers import Layer, uniform_init
from .tensor import sigmoid, tanh


def orthogonal_init(rng, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # fix the sign convention so init is deterministic
    return q.astype(config.dtype())


class GruCell(Layer):
    def __init__(self, input_dim: int, units: int, rng, name: str = "gru"):
        super().__init__(name)
        self.input_dim = input_dim
        self.units = units
        self.wz = uniform_init(rng, (input_dim, units), input_dim)
        self.wr = uniform_init(rng, (input_dim, units), input_dim)
        self.wh = uniform_init(rng, (input_dim, units), input_dim)
        self.rz = orthogonal_init(rng, units)
        self.rr = orthogonal_init(rng, units)
        self.rh = orthogonal_init(rng, units)
        self.bz = np.zeros(units, dtype=config.dtype())
        self.br = np.zeros(units, dtype=config.dtype())
        self.bh = np.zeros(units, dtype=config.dtype())
        for pname in self.params():
            setattr(self, "g" + pname, np.zeros_like(getattr(self, pname)))

    def params(self):
        return {
            n: getattr(self, n)
            for n in ("wz", "wr", "wh", "rz", "rr", "rh", "bz", "br", "bh")
        }

    def grads(self):
        return {
            n: getattr(self, "g" + n)
            for n in ("wz", "wr", "wh", "rz", "rr", "rh", "bz", "br", "bh")
        }

    def step(self, x, h_prev, train=False):
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"{self.name}: expected input [N,{self.input_dim}], got {x.shape}")
        if h_prev.shape != (x.shape[0], self.units):
            raise ValueError(
                f"{self.name}: hidden state shape {h_prev.shape} does not match "
                f"batch {x.shape[0]} x units {self.units}"
            )
        z = sigmoid(x @ self.wz + h_prev @ self.rz + self.bz)
        r = sigmoid(x @ self.wr + h_prev @ self.rr + self.br)
        rh_prev = r * h_prev
        hc = tanh(x @ self.wh + rh_prev @ self.rh + self.bh)
        h = (1.0 - z) * h_prev + z * hc
        if train:
            self._cache.append((x, h_prev, z, r, rh_prev, hc))
        return h

    # Alias so the cell can sit in layer-generic code paths.
    forward = step

    def backward_step(self, grad_h):
        """Unwind the most recent cached step; returns (grad_x, grad_h_prev)."""
        x, h_prev, z, r, rh_prev, hc = self._pop()
        dz = grad_h * (hc - h_prev)
        dhc = grad_h * z
        dh_prev = grad_h * (1.0 - z)

        dhc_pre = dhc * (1.0 - hc * hc)
        self.gwh += x.T @ dhc_pre
        self.grh += rh_prev.T @ dhc_pre
        self.gbh += dhc_pre.sum(axis=0)
        d_rh_prev = dhc_pre @ self.rh.T
        dr = d_rh_prev * h_prev
        dh_prev += d_rh_prev * r

        dr_pre = dr * r * (1.0 - r)
        self.gwr += x.T @ dr_pre
        self.grr += h_prev.T @ dr_pre
        self.gbr += dr_pre.sum(axis=0)

        dz_pre = dz * z * (1.0 - z)
        self.gwz += x.T @ dz_pre
        self.grz += h_prev.T @ dz_pre
        self.gbz += dz_pre.sum(axis=0)

        grad_x = dz_pre @ self.wz.T + dr_pre @ self.wr.T + dhc_pre @ self.wh.T
        dh_prev += dz_pre @ self.rz.T + dr_pre @ self.rr.T
        return grad_x, dh_prev

    backward = backward_step
