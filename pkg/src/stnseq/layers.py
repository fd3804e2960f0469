"""Differentiable layers with hand-written backward passes.

Every layer keeps a stack of forward caches, so a single instance can be applied
several times inside one pass (shared weights across time steps) and unwound in
reverse order. Weight gradients accumulate across backward calls until
``zero_grads``. Caches are only recorded when ``train=True``; evaluation passes
stay allocation-light and cannot be backpropagated through.
"""

from __future__ import annotations

import math

import numpy as np

from . import config
from .tensor import relu as _relu, sigmoid as _sigmoid

__all__ = [
    "Layer",
    "Conv2d",
    "MaxPool2x2",
    "Dense",
    "Dropout",
    "Relu",
    "Flatten",
    "Sequential",
    "softmax",
    "softmax_xent",
    "uniform_init",
]


def uniform_init(rng, shape, fan_in):
    """Uniform weights on [-1/sqrt(fan_in), 1/sqrt(fan_in)] in the active dtype."""
    a = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-a, a, size=shape).astype(config.dtype())


class Layer:
    """Base contract: named params, same-shaped grads, stacked forward caches."""

    def __init__(self, name: str):
        self.name = name
        self._cache: list = []

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def zero_grads(self) -> None:
        for g in self.grads().values():
            g[...] = 0.0

    def clear_cache(self) -> None:
        self._cache.clear()

    def _pop(self):
        if not self._cache:
            raise RuntimeError(f"{self.name}: backward called without a cached forward")
        return self._cache.pop()

    def forward(self, x, train: bool = False):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError


class Conv2d(Layer):
    """3x3 cross-correlation, stride 1, one-pixel zero padding (same spatial size)."""

    def __init__(self, in_channels: int, filters: int, rng, name: str = "conv"):
        super().__init__(name)
        self.in_channels = in_channels
        self.filters = filters
        self.w = uniform_init(rng, (filters, in_channels, 3, 3), in_channels * 9)
        self.b = np.zeros(filters, dtype=config.dtype())
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.gw, "b": self.gb}

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ValueError(
                f"{self.name}: input has {c} channels, kernels expect {self.in_channels}"
            )
        padded = np.zeros((n, c, h + 2, w + 2), dtype=x.dtype)
        padded[:, :, 1 : h + 1, 1 : w + 1] = x
        acc = np.zeros((n, h, w, self.filters), dtype=x.dtype)
        for di in range(3):
            for dj in range(3):
                acc += np.tensordot(
                    padded[:, :, di : di + h, dj : dj + w],
                    self.w[:, :, di, dj],
                    axes=([1], [1]),
                )
        acc += self.b
        out = np.ascontiguousarray(acc.transpose(0, 3, 1, 2))
        if train:
            self._cache.append((padded, (h, w)))
        return out

    def backward(self, grad_out):
        padded, (h, w) = self._pop()
        go = grad_out.transpose(0, 2, 3, 1)  # [n, h, w, f]
        self.gb += grad_out.sum(axis=(0, 2, 3))
        gpad = np.zeros((padded.shape[0], h + 2, w + 2, padded.shape[1]), dtype=padded.dtype)
        for di in range(3):
            for dj in range(3):
                self.gw[:, :, di, dj] += np.tensordot(
                    go, padded[:, :, di : di + h, dj : dj + w], axes=([0, 1, 2], [0, 2, 3])
                )
                gpad[:, di : di + h, dj : dj + w, :] += np.tensordot(
                    go, self.w[:, :, di, dj], axes=([3], [0])
                )
        return np.ascontiguousarray(gpad[:, 1 : h + 1, 1 : w + 1, :].transpose(0, 3, 1, 2))


class MaxPool2x2(Layer):
    """2x2 max pooling, stride 2; an odd trailing row/column is dropped.

    Backward routes the gradient to the first maximum in row-major window order.
    """

    def __init__(self, name: str = "pool"):
        super().__init__(name)

    @staticmethod
    def _windows(x):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        win = x[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2)
        return win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4), (h2, w2)

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        if h < 2 or w < 2:
            raise ValueError(f"{self.name}: spatial extents must be >= 2, got {h}x{w}")
        win, _ = self._windows(x)
        if train:
            self._cache.append((win.argmax(axis=-1), x.shape))
        return win.max(axis=-1)

    def backward(self, grad_out):
        idx, (n, c, h, w) = self._pop()
        h2, w2 = h // 2, w // 2
        scatter = np.zeros((n, c, h2, w2, 4), dtype=grad_out.dtype)
        np.put_along_axis(scatter, idx[..., None], grad_out[..., None], axis=-1)
        g = scatter.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        g = g.reshape(n, c, 2 * h2, 2 * w2)
        if 2 * h2 == h and 2 * w2 == w:
            return np.ascontiguousarray(g)
        full = np.zeros((n, c, h, w), dtype=grad_out.dtype)
        full[:, :, : 2 * h2, : 2 * w2] = g
        return full


class Dense(Layer):
    """Fully connected layer, y = x @ w + b."""

    def __init__(self, in_dim: int, units: int, rng, name: str = "dense"):
        super().__init__(name)
        self.in_dim = in_dim
        self.units = units
        self.w = uniform_init(rng, (in_dim, units), in_dim)
        self.b = np.zeros(units, dtype=config.dtype())
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.gw, "b": self.gb}

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"{self.name}: expected input [N,{self.in_dim}], got {x.shape}")
        if train:
            self._cache.append(x)
        return x @ self.w + self.b

    def backward(self, grad_out):
        x = self._pop()
        self.gw += x.T @ grad_out
        self.gb += grad_out.sum(axis=0)
        return grad_out @ self.w.T


class Relu(Layer):
    def __init__(self, name: str = "relu"):
        super().__init__(name)

    def forward(self, x, train=False):
        if train:
            self._cache.append(x > 0)
        return _relu(x)

    def backward(self, grad_out):
        return grad_out * self._pop()


class Dropout(Layer):
    """Inverted dropout: train mode drops units with probability p and rescales
    survivors by 1/(1-p); eval mode is the identity."""

    def __init__(self, p: float, seed=0, name: str = "dropout"):
        super().__init__(name)
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.reseed(seed)

    def reseed(self, seed) -> None:
        self._rng = np.random.default_rng(seed)

    def forward(self, x, train=False):
        if not train or self.p == 0.0:
            if train:
                self._cache.append(None)
            return x
        keep = self._rng.random(x.shape) >= self.p
        scale = 1.0 / (1.0 - self.p)
        mask = keep.astype(x.dtype) * scale
        self._cache.append(mask)
        return x * mask

    def backward(self, grad_out):
        mask = self._pop()
        return grad_out if mask is None else grad_out * mask


class Flatten(Layer):
    def __init__(self, name: str = "flatten"):
        super().__init__(name)

    def forward(self, x, train=False):
        if train:
            self._cache.append(x.shape)
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._pop())


class Sequential(Layer):
    """Ordered chain of layers sharing the Layer contract."""

    def __init__(self, layers: list[Layer], name: str = "seq"):
        super().__init__(name)
        self.layers = list(layers)

    def params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params().items():
                out[f"{i:02d}_{layer.name}/{k}"] = v
        return out

    def grads(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.grads().items():
                out[f"{i:02d}_{layer.name}/{k}"] = v
        return out

    def clear_cache(self):
        for layer in self.layers:
            layer.clear_cache()

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def dropout_layers(self):
        return [l for l in self.layers if isinstance(l, Dropout)]


def softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy of row-wise softmax against integer labels.

    Returns (loss, grad_logits) with grad = (softmax - onehot) / N.
    """
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    p = softmax(logits)
    rows = np.arange(n)
    loss = float(-np.log(p[rows, labels]).mean())
    grad = p
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad
