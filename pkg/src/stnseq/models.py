"""The three sequence-classification architectures.

All variants read a one-channel canvas and emit one 10-way logit vector per
sequence position:

* recurrent attention ("rnn-spn"): a pooled conv stack summarizes the canvas,
  a GRU consumes that summary at every step, a linear head turns each hidden
  state into an affine transform, and each transform crops the raw canvas for
  a shared classifier. One prediction per step.
* feed-forward attention ("ffn-spn"): a conv + dense localizer emits a single
  transform, the single crop feeds a classifier with one softmax head per
  position.
* "conv-baseline": the ffn classifier applied to the raw canvas, no attention.

``scale`` divides filter counts and hidden sizes so the same topology runs at
desk scale; scale=1 is the full-size configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import config as _precision
from .gru import GruCell
from .layers import Conv2d, Dense, Dropout, Flatten, MaxPool2x2, Relu, Sequential
from .stn import AffineSampler, IDENTITY_TRANSFORM, output_extent

VARIANTS = ("rnn-spn", "ffn-spn", "conv-baseline")

LOC_FILTERS = 20
RNN_CLS_FILTERS = 32
FFN_CLS_FILTERS = 96
GRU_UNITS = 256
RNN_CLS_DENSE = 256
FFN_CLS_DENSE = 400
FFN_LOC_DENSE = 200
NUM_CLASSES = 10


@dataclass
class ModelConfig:
    variant: str = "rnn-spn"
    downsample: float = 2.0
    dropout: float | None = None  # None picks the per-variant default
    seq_len: int = 3
    canvas: tuple[int, int] = (100, 100)
    scale: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.variant != "conv-baseline" and self.downsample < 1:
            raise ValueError(f"down-sampling factor must be >= 1, got {self.downsample}")
        if self.scale < 1:
            raise ValueError("scale must be a positive integer")
        if self.dropout is not None and not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        self.canvas = tuple(self.canvas)

    @property
    def dropout_p(self) -> float:
        if self.dropout is not None:
            return self.dropout
        return 0.3 if self.variant == "rnn-spn" else 0.5

    def sized(self, n: int) -> int:
        return max(1, n // self.scale)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["canvas"] = list(self.canvas)
        return d


def _pooled(extent: int, times: int) -> int:
    for _ in range(times):
        extent //= 2
    return extent


def _localization_conv(cfg: ModelConfig, rng) -> tuple[Sequential, int]:
    f = cfg.sized(LOC_FILTERS)
    stack = Sequential(
        [
            MaxPool2x2(),
            Conv2d(1, f, rng),
            Relu(),
            MaxPool2x2(),
            Conv2d(f, f, rng),
            Relu(),
            MaxPool2x2(),
            Conv2d(f, f, rng),
            Relu(),
            Flatten(),
        ],
        name="loc_conv",
    )
    h, w = cfg.canvas
    feat_dim = f * _pooled(h, 3) * _pooled(w, 3)
    return stack, feat_dim


def _classifier(cfg: ModelConfig, filters: int, dense_units: int, crop: tuple[int, int], rng):
    f = cfg.sized(filters)
    d = cfg.sized(dense_units)
    p = cfg.dropout_p
    h, w = crop
    flat_dim = f * _pooled(h, 2) * _pooled(w, 2)
    stack = Sequential(
        [
            Conv2d(1, f, rng),
            Relu(),
            MaxPool2x2(),
            Dropout(p),
            Conv2d(f, f, rng),
            Relu(),
            MaxPool2x2(),
            Dropout(p),
            Conv2d(f, f, rng),
            Relu(),
            Dropout(p),
            Flatten(),
            Dense(flat_dim, d, rng),
            Relu(),
        ],
        name="classifier",
    )
    return stack, d


def _identity_transform_head(in_dim: int, rng) -> Dense:
    head = Dense(in_dim, 6, rng, name="transform")
    head.w[...] = 0.0
    head.b[...] = np.asarray(IDENTITY_TRANSFORM, dtype=head.b.dtype)
    return head


@dataclass
class ModelOutput:
    logits: np.ndarray  # [T, N, 10]
    crops: np.ndarray | None = None  # [T, N, 1, h, w]
    transforms: np.ndarray | None = None  # [T, N, 6]


class SequenceModel:
    """Common plumbing shared by the three variants."""

    def __init__(self, cfg: ModelConfig):
        self.config = cfg
        self._rng = np.random.default_rng(cfg.seed)

    def components(self) -> dict:
        raise NotImplementedError

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, comp in self.components().items():
            for k, v in comp.params().items():
                out[f"{prefix}/{k}"] = v
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, comp in self.components().items():
            for k, v in comp.grads().items():
                out[f"{prefix}/{k}"] = v
        return out

    def param_count(self) -> int:
        return sum(v.size for v in self.params().values())

    def zero_grads(self) -> None:
        for g in self.grads().values():
            g[...] = 0.0

    def clear_caches(self) -> None:
        for comp in self.components().values():
            comp.clear_cache()
        for sampler in self._samplers():
            sampler.clear_cache()

    def _samplers(self):
        return []

    def _dropout_layers(self):
        out = []
        for comp in self.components().values():
            if isinstance(comp, Sequential):
                out.extend(comp.dropout_layers())
        return out

    def reseed_dropout(self, seed) -> None:
        for i, layer in enumerate(self._dropout_layers()):
            layer.reseed([seed, 9001 + i])

    def _check_input(self, x):
        h, w = self.config.canvas
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (h, w):
            raise ValueError(f"expected input [N,1,{h},{w}], got {tuple(x.shape)}")

    def forward(self, x, train: bool = False) -> ModelOutput:
        raise NotImplementedError

    def backward(self, grad_logits) -> np.ndarray:
        raise NotImplementedError


class RecurrentAttentionModel(SequenceModel):
    variant = "rnn-spn"

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        rng = self._rng
        self.loc_conv, feat_dim = _localization_conv(cfg, rng)
        self.units = cfg.sized(GRU_UNITS)
        self.gru = GruCell(feat_dim, self.units, rng)
        self.transform_head = _identity_transform_head(self.units, rng)
        h, w = cfg.canvas
        self.crop_shape = output_extent(h, w, cfg.downsample)
        self.sampler = AffineSampler(*self.crop_shape)
        self.classifier, cls_dim = _classifier(
            cfg, RNN_CLS_FILTERS, RNN_CLS_DENSE, self.crop_shape, rng
        )
        self.head = Dense(cls_dim, NUM_CLASSES, rng, name="softmax_head")
        self.reseed_dropout(cfg.seed)

    def components(self):
        return {
            "loc_conv": self.loc_conv,
            "gru": self.gru,
            "transform_head": self.transform_head,
            "classifier": self.classifier,
            "head": self.head,
        }

    def _samplers(self):
        return [self.sampler]

    def forward(self, x, train=False, hidden0=None) -> ModelOutput:
        self._check_input(x)
        self.clear_caches()
        n = x.shape[0]
        t_steps = self.config.seq_len
        c = self.loc_conv.forward(x, train=train)
        h = hidden0 if hidden0 is not None else np.zeros((n, self.units), dtype=x.dtype)
        logits, crops, thetas = [], [], []
        for _ in range(t_steps):
            h = self.gru.step(c, h, train=train)
            theta = self.transform_head.forward(h, train=train)
            crop = self.sampler.forward(x, theta, train=train)
            feat = self.classifier.forward(crop, train=train)
            logits.append(self.head.forward(feat, train=train))
            crops.append(crop)
            thetas.append(theta)
        return ModelOutput(
            logits=np.stack(logits),
            crops=np.stack(crops),
            transforms=np.stack(thetas),
        )

    def backward(self, grad_logits) -> np.ndarray:
        t_steps = self.config.seq_len
        grad_x = None
        grad_c = None
        grad_h_rec = None
        for t in reversed(range(t_steps)):
            gfeat = self.head.backward(grad_logits[t])
            gcrop = self.classifier.backward(gfeat)
            gx, gtheta = self.sampler.backward(gcrop)
            grad_x = gx if grad_x is None else grad_x + gx
            gh = self.transform_head.backward(gtheta)
            if grad_h_rec is not None:
                gh = gh + grad_h_rec
            gc, grad_h_rec = self.gru.backward_step(gh)
            grad_c = gc if grad_c is None else grad_c + gc
        grad_x += self.loc_conv.backward(grad_c)
        self._grad_hidden0 = grad_h_rec
        return grad_x


class FeedForwardAttentionModel(SequenceModel):
    variant = "ffn-spn"

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        rng = self._rng
        loc_conv, feat_dim = _localization_conv(cfg, rng)
        loc_dense = cfg.sized(FFN_LOC_DENSE)
        self.localizer = Sequential(
            loc_conv.layers
            + [Dense(feat_dim, loc_dense, rng), Relu(), _identity_transform_head(loc_dense, rng)],
            name="localizer",
        )
        h, w = cfg.canvas
        self.crop_shape = output_extent(h, w, cfg.downsample)
        self.sampler = AffineSampler(*self.crop_shape)
        self.classifier, cls_dim = _classifier(
            cfg, FFN_CLS_FILTERS, FFN_CLS_DENSE, self.crop_shape, rng
        )
        self.heads = [
            Dense(cls_dim, NUM_CLASSES, rng, name=f"softmax_head{t}")
            for t in range(cfg.seq_len)
        ]
        self.reseed_dropout(cfg.seed)

    def components(self):
        out = {"localizer": self.localizer, "classifier": self.classifier}
        for t, head in enumerate(self.heads):
            out[f"head{t}"] = head
        return out

    def _samplers(self):
        return [self.sampler]

    def forward(self, x, train=False) -> ModelOutput:
        self._check_input(x)
        self.clear_caches()
        theta = self.localizer.forward(x, train=train)
        crop = self.sampler.forward(x, theta, train=train)
        feat = self.classifier.forward(crop, train=train)
        logits = np.stack([head.forward(feat, train=train) for head in self.heads])
        return ModelOutput(
            logits=logits, crops=crop[None], transforms=theta[None]
        )

    def backward(self, grad_logits) -> np.ndarray:
        gfeat = None
        for t in reversed(range(len(self.heads))):
            g = self.heads[t].backward(grad_logits[t])
            gfeat = g if gfeat is None else gfeat + g
        gcrop = self.classifier.backward(gfeat)
        grad_x, gtheta = self.sampler.backward(gcrop)
        grad_x = grad_x + self.localizer.backward(gtheta)
        return grad_x


class ConvBaselineModel(SequenceModel):
    variant = "conv-baseline"

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        rng = self._rng
        self.classifier, cls_dim = _classifier(
            cfg, FFN_CLS_FILTERS, FFN_CLS_DENSE, cfg.canvas, rng
        )
        self.heads = [
            Dense(cls_dim, NUM_CLASSES, rng, name=f"softmax_head{t}")
            for t in range(cfg.seq_len)
        ]
        self.reseed_dropout(cfg.seed)

    def components(self):
        out = {"classifier": self.classifier}
        for t, head in enumerate(self.heads):
            out[f"head{t}"] = head
        return out

    def forward(self, x, train=False) -> ModelOutput:
        self._check_input(x)
        self.clear_caches()
        feat = self.classifier.forward(x, train=train)
        logits = np.stack([head.forward(feat, train=train) for head in self.heads])
        return ModelOutput(logits=logits)

    def backward(self, grad_logits) -> np.ndarray:
        gfeat = None
        for t in reversed(range(len(self.heads))):
            g = self.heads[t].backward(grad_logits[t])
            gfeat = g if gfeat is None else gfeat + g
        return self.classifier.backward(gfeat)


_MODEL_CLASSES = {
    "rnn-spn": RecurrentAttentionModel,
    "ffn-spn": FeedForwardAttentionModel,
    "conv-baseline": ConvBaselineModel,
}


def build(cfg: ModelConfig) -> SequenceModel:
    return _MODEL_CLASSES[cfg.variant](cfg)


def predict(logits) -> np.ndarray:
    """Digit ids per step, [T, N]; ties go to the lowest class id."""
    return np.argmax(logits, axis=-1)


def toy_config(seed: int = 0, downsample: float = 2.0) -> ModelConfig:
    """A gradcheck-sized recurrent model: 16x16 canvas, 2 steps, 4-filter convs."""
    return ModelConfig(
        variant="rnn-spn",
        downsample=downsample,
        seq_len=2,
        canvas=(16, 16),
        scale=5,
        seed=seed,
    )


def randomize_transform_head(model, rng, weight_spread=0.2, bias_spread=0.15) -> None:
    """Give the transform head nonzero weights and an off-identity bias.

    Used by gradient checks: with the identity initialization the head weights
    are zero (no signal flows back into the recurrent path) and every sample
    lands exactly on a pixel center (an interpolation kink).
    """
    heads = []
    if hasattr(model, "transform_head"):
        heads.append(model.transform_head)
    if hasattr(model, "localizer"):
        heads.append(model.localizer.layers[-1])
    for head in heads:
        head.w[...] = rng.uniform(-weight_spread, weight_spread, head.w.shape) / np.sqrt(
            head.w.shape[0]
        )
        head.b[...] = np.asarray(IDENTITY_TRANSFORM) + rng.uniform(
            -bias_spread, bias_spread, 6
        )
