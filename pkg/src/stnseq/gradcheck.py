"""Central-difference verification of every analytic gradient in the stack.

The checker perturbs each entry of each tensor in both directions, compares
(f(x+eps) - f(x-eps)) / 2eps against the backward pass, and reports the max
relative error per tensor. Loss functions must be deterministic across calls;
scenarios with dropout reseed the mask stream before every evaluation so the
finite differences see a frozen network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import config
from .gru import GruCell
from .layers import Conv2d, Dense, Dropout, MaxPool2x2, Relu, softmax_xent
from .models import ModelConfig, build, randomize_transform_head, toy_config
from .stn import AffineSampler, make_grid, sample_batch, sample_batch_backward, smap_grad_to_theta, transform_grid
from .tensor import NonFiniteError

DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-4


@dataclass
class GradCheckReport:
    scope: str
    tol: float
    errors: dict[str, float]

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.errors.values())

    def lines(self):
        for name, err in self.errors.items():
            status = "ok" if err < self.tol else "FAIL"
            yield f"{self.scope}: {name:40s} max_rel_err={err:.3e} [{status}]"


def _require_double():
    if config.dtype() != np.dtype(np.float64):
        raise RuntimeError("gradient checks require the float64 configuration")


def _max_rel_err(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float((np.abs(a - n) / denom).max())


def check_gradients(loss_fn, analytic_fn, wrt, *, scope="check", eps=DEFAULT_EPS, tol=DEFAULT_TOL) -> GradCheckReport:
    """Compare analytic gradients with central differences for every tensor.

    loss_fn() -> float re-evaluates the loss with the current tensor values;
    analytic_fn() -> dict of gradients matching the keys of ``wrt``. Tensors in
    ``wrt`` are perturbed in place and restored.
    """
    _require_double()
    analytic = analytic_fn()
    errors = {}
    for name, x in wrt.items():
        grad = analytic[name]
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"analytic gradient for {name} is not finite")
        numeric = np.empty_like(x)
        flat_x = x.reshape(-1)
        if flat_x.base is None and x.ndim > 0 and x.size > 1:
            raise ValueError(f"tensor {name} must be contiguous to be perturbed in place")
        flat_n = numeric.reshape(-1)
        for i in range(flat_x.size):
            old = flat_x[i]
            flat_x[i] = old + eps
            f_plus = loss_fn()
            flat_x[i] = old - eps
            f_minus = loss_fn()
            flat_x[i] = old
            if not np.isfinite(f_plus) or not np.isfinite(f_minus):
                raise NonFiniteError(f"loss not finite while perturbing {name}")
            flat_n[i] = (f_plus - f_minus) / (2.0 * eps)
        errors[name] = _max_rel_err(grad, numeric)
    return GradCheckReport(scope=scope, tol=tol, errors=errors)


def _projection(rng, shape):
    return rng.standard_normal(shape)


# --- layer scenarios ---------------------------------------------------------


def _check_single_layer(layer, x, rng, scope, eps, tol, extra_wrt=None):
    proj = _projection(rng, layer.forward(x, train=False).shape)
    layer.clear_cache()

    def loss():
        layer.clear_cache()
        return float((layer.forward(x, train=True) * proj).sum())

    def analytic():
        layer.zero_grads()
        layer.clear_cache()
        layer.forward(x, train=True)
        gin = layer.backward(proj)
        grads = {"input": gin}
        grads.update(layer.grads())
        return grads

    wrt = {"input": x}
    wrt.update(layer.params())
    if extra_wrt:
        wrt.update(extra_wrt)
    return check_gradients(loss, analytic, wrt, scope=scope, eps=eps, tol=tol)


def check_layers(seed=0, eps=DEFAULT_EPS, tol=DEFAULT_TOL) -> list[GradCheckReport]:
    _require_double()
    rng = np.random.default_rng(seed)
    reports = []

    conv = Conv2d(3, 4, rng)
    reports.append(
        _check_single_layer(conv, rng.standard_normal((2, 3, 6, 5)), rng, "conv2d", eps, tol)
    )

    dense = Dense(7, 5, rng)
    reports.append(
        _check_single_layer(dense, rng.standard_normal((4, 7)), rng, "dense", eps, tol)
    )

    pool = MaxPool2x2()
    reports.append(
        _check_single_layer(pool, rng.standard_normal((2, 2, 6, 6)), rng, "maxpool", eps, tol)
    )

    relu = Relu()
    x = rng.standard_normal((3, 9))
    x[np.abs(x) < 0.05] += 0.1  # keep clear of the kink at zero
    reports.append(_check_single_layer(relu, x, rng, "relu", eps, tol))

    drop = Dropout(0.4, seed=seed)
    x = rng.standard_normal((3, 8))
    proj = _projection(rng, x.shape)

    def drop_loss():
        drop.clear_cache()
        drop.reseed(seed + 1)
        return float((drop.forward(x, train=True) * proj).sum())

    def drop_analytic():
        drop.clear_cache()
        drop.reseed(seed + 1)
        drop.forward(x, train=True)
        return {"input": drop.backward(proj)}

    reports.append(
        check_gradients(drop_loss, drop_analytic, {"input": x}, scope="dropout", eps=eps, tol=tol)
    )

    logits = rng.standard_normal((5, 10))
    labels = rng.integers(0, 10, size=5)

    def xent_loss():
        return softmax_xent(logits, labels)[0]

    def xent_analytic():
        return {"logits": softmax_xent(logits, labels)[1]}

    reports.append(
        check_gradients(xent_loss, xent_analytic, {"logits": logits}, scope="softmax_xent", eps=eps, tol=tol)
    )
    return reports


# --- sampler scenario --------------------------------------------------------


def check_sampler(seed=0, eps=DEFAULT_EPS, tol=DEFAULT_TOL) -> GradCheckReport:
    """Gradients of the bilinear crop w.r.t. the image and all six transform
    parameters, at coordinates away from interpolation kinks."""
    _require_double()
    rng = np.random.default_rng(seed)
    images = rng.standard_normal((2, 1, 8, 8))
    theta = np.tile(np.asarray([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]), (2, 1))
    theta += rng.uniform(-0.2, 0.2, theta.shape)
    theta[:, (2, 5)] += 0.37 / 7.0  # push samples off pixel centers
    sampler = AffineSampler(5, 5)
    proj = _projection(rng, (2, 1, 5, 5))

    def loss():
        sampler.clear_cache()
        return float((sampler.forward(images, theta, train=True) * proj).sum())

    def analytic():
        sampler.clear_cache()
        sampler.forward(images, theta, train=True)
        gimg, gtheta = sampler.backward(proj)
        return {"image": gimg, "theta": gtheta}

    return check_gradients(
        loss, analytic, {"image": images, "theta": theta}, scope="bilinear_sampler", eps=eps, tol=tol
    )


# --- recurrent scenario ------------------------------------------------------


def check_gru(seed=0, steps=3, eps=DEFAULT_EPS, tol=DEFAULT_TOL) -> GradCheckReport:
    """Backward-through-time over an unrolled loop, shared weights included."""
    _require_double()
    rng = np.random.default_rng(seed)
    cell = GruCell(5, 4, rng)
    xs = rng.standard_normal((steps, 3, 5))
    h0 = rng.standard_normal((3, 4)) * 0.5
    proj = _projection(rng, (steps, 3, 4))

    def run(collect=False):
        cell.clear_cache()
        h = h0
        total = 0.0
        hs = []
        for t in range(steps):
            h = cell.step(xs[t], h, train=True)
            hs.append(h)
            total += float((h * proj[t]).sum())
        return total, hs

    def loss():
        return run()[0]

    def analytic():
        cell.zero_grads()
        run()
        grad_h = np.zeros_like(h0)
        grad_xs = np.empty_like(xs)
        for t in reversed(range(steps)):
            grad_xs[t], grad_h = cell.backward_step(proj[t] + grad_h)
        grads = {"xs": grad_xs, "h0": grad_h}
        grads.update(cell.grads())
        return grads

    wrt = {"xs": xs, "h0": h0}
    wrt.update(cell.params())
    return check_gradients(loss, analytic, wrt, scope=f"gru_{steps}step", eps=eps, tol=tol)


# --- full model scenario -----------------------------------------------------


def check_full_model(seed=0, eps=DEFAULT_EPS, tol=DEFAULT_TOL, canvas=(16, 16), corrupt=False) -> GradCheckReport:
    """End-to-end check of the toy recurrent-attention model, input included.

    ``corrupt`` flips the sign of one bias gradient, a negative control that
    must make the check fail.
    """
    _require_double()
    rng = np.random.default_rng(seed)
    cfg = toy_config(seed=seed)
    cfg.canvas = tuple(canvas)
    model = build(cfg)
    randomize_transform_head(model, rng)
    x = rng.random((2, 1, *cfg.canvas))
    out_shape = model.forward(x, train=False).logits.shape
    proj = _projection(rng, out_shape)
    mask_seed = seed + 71

    def loss():
        model.reseed_dropout(mask_seed)
        out = model.forward(x, train=True)
        return float((out.logits * proj).sum())

    def analytic():
        model.zero_grads()
        model.reseed_dropout(mask_seed)
        model.forward(x, train=True)
        gin = model.backward(proj)
        grads = {"input": gin}
        grads.update(model.grads())
        if corrupt:
            grads["head/b"] = -grads["head/b"]
        return grads

    wrt = {"input": x}
    wrt.update(model.params())
    return check_gradients(loss, analytic, wrt, scope="toy_rnn_model", eps=eps, tol=tol)


SCOPES = ("layers", "stn", "gru", "full")


def run_scope(scope: str, seed=0, eps=DEFAULT_EPS, tol=DEFAULT_TOL, corrupt=False) -> list[GradCheckReport]:
    if scope == "layers":
        return check_layers(seed, eps, tol)
    if scope == "stn":
        return [check_sampler(seed, eps, tol)]
    if scope == "gru":
        return [check_gru(seed, eps=eps, tol=tol)]
    if scope == "full":
        return [check_full_model(seed, eps, tol, corrupt=corrupt)]
    raise ValueError(f"unknown gradcheck scope {scope!r}; choose from {SCOPES}")
