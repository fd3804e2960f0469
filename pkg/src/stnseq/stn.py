"""Affine grid sampling: the differentiable zoom/rotate/skew mechanism.

Coordinates are (y, x) pairs in a normalized space where (-1, -1) is the
top-left pixel center and (+1, +1) the bottom-right pixel center. A transform
is six numbers laid out row-major as [[t1, t2, t3], [t4, t5, t6]] acting on
augmented points (y, x, 1); the identity is (1, 0, 0, 0, 1, 0). Samples whose
neighbors fall outside the image read zeros, so leaving the canvas fades the
output to black instead of clamping.
"""

from __future__ import annotations

import math

import numpy as np

IDENTITY_TRANSFORM = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


def output_extent(h_in: int, w_in: int, d: float) -> tuple[int, int]:
    """Output size for down-sampling factor d >= 1: floor(H/d) by floor(W/d)."""
    if d < 1:
        raise ValueError(f"down-sampling factor must be >= 1, got {d}")
    return int(math.floor(h_in / d)), int(math.floor(w_in / d))


def _axis_coords(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError(f"grid extent must be >= 1, got {n}")
    if n == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, n)


def make_grid(h: int, w: int) -> np.ndarray:
    """Equally spaced normalized target coordinates, shape [h, w, 2] as (y, x).

    Corners sit exactly at (-1,-1) and (+1,+1); a singleton axis uses 0.
    """
    ys = _axis_coords(h)
    xs = _axis_coords(w)
    grid = np.empty((h, w, 2))
    grid[..., 0] = ys[:, None]
    grid[..., 1] = xs[None, :]
    return grid


def transform_grid(theta, grid: np.ndarray) -> np.ndarray:
    """Map grid points through the affine transform(s).

    theta is [6] for one transform or [N, 6] for a batch; returns [h, w, 2] or
    [N, h, w, 2] of source-space (y', x') coordinates.
    """
    theta = np.asarray(theta)
    batched = theta.ndim == 2
    t = theta if batched else theta[None, :]
    y = grid[..., 0]
    x = grid[..., 1]
    sy = (
        t[:, 0, None, None] * y[None] + t[:, 1, None, None] * x[None] + t[:, 2, None, None]
    )
    sx = (
        t[:, 3, None, None] * y[None] + t[:, 4, None, None] * x[None] + t[:, 5, None, None]
    )
    out = np.stack([sy, sx], axis=-1)
    return out if batched else out[0]


def _neighbor_data(images: np.ndarray, smap: np.ndarray):
    """Shared forward geometry: pixel coords, corner indices, weights, masks."""
    n, c, h, w = images.shape
    py = (smap[..., 0] + 1.0) * 0.5 * (h - 1)
    px = (smap[..., 1] + 1.0) * 0.5 * (w - 1)
    y0 = np.floor(py)
    x0 = np.floor(px)
    dy = py - y0
    dx = px - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    flat = images.reshape(n, c, h * w)
    batch = np.arange(n)[:, None, None]

    corners = []
    for oy, ox, wgt in (
        (0, 0, (1.0 - dy) * (1.0 - dx)),
        (0, 1, (1.0 - dy) * dx),
        (1, 0, dy * (1.0 - dx)),
        (1, 1, dy * dx),
    ):
        yi = y0 + oy
        xi = x0 + ox
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        lin = np.clip(yi, 0, h - 1) * w + np.clip(xi, 0, w - 1)
        vals = flat[batch, :, lin]  # [n, hout, wout, c]
        vals = vals * valid[..., None]
        corners.append((wgt, vals, valid, lin, oy, ox))
    return corners, (dy, dx), (py, px), flat.shape


def sample_batch(images: np.ndarray, smaps: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of [N,C,H,W] images at [N,h,w,2] sample maps."""
    corners, _, _, _ = _neighbor_data(images, smaps)
    (w00, v00, *_), (w01, v01, *_), (w10, v10, *_), (w11, v11, *_) = corners
    out = (
        w00[..., None] * v00
        + w01[..., None] * v01
        + w10[..., None] * v10
        + w11[..., None] * v11
    )
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def sample_batch_backward(images, smaps, grad_out):
    """Gradients of sample_batch w.r.t. the images and the sample coordinates.

    grad_out is [N,C,h,w]; returns (grad_images [N,C,H,W], grad_smaps [N,h,w,2]).
    The coordinate gradient is the piecewise-linear derivative of the corner
    weights; contributions from out-of-image corners are zero.
    """
    n, c, h, w = images.shape
    corners, (dy, dx), _, _ = _neighbor_data(images, smaps)
    go = grad_out.transpose(0, 2, 3, 1)  # [n, hout, wout, c]
    grad_flat = np.zeros((n, c, h * w), dtype=images.dtype)
    batch = np.arange(n)[:, None, None]

    # d(weight)/d(py), d(weight)/d(px) per corner, in corner order
    dwy = (-(1.0 - dx), -dx, (1.0 - dx), dx)
    dwx = (-(1.0 - dy), (1.0 - dy), -dy, dy)
    gpy = np.zeros(dy.shape, dtype=images.dtype)
    gpx = np.zeros(dx.shape, dtype=images.dtype)
    for k, (wgt, vals, valid, lin, _, _) in enumerate(corners):
        # scatter-add per corner; invalid corners carry zero weight already
        contrib = go * (wgt * valid)[..., None]  # [n, hout, wout, c]
        np.add.at(grad_flat.transpose(0, 2, 1), (batch, lin), contrib)
        inner = (go * vals).sum(axis=-1)  # [n, hout, wout]
        gpy += inner * dwy[k]
        gpx += inner * dwx[k]

    grad_images = grad_flat.reshape(n, c, h, w)
    grad_smaps = np.empty(smaps.shape, dtype=images.dtype)
    grad_smaps[..., 0] = gpy * 0.5 * (h - 1)
    grad_smaps[..., 1] = gpx * 0.5 * (w - 1)
    return grad_images, grad_smaps


def bilinear_sample(image: np.ndarray, smap: np.ndarray) -> np.ndarray:
    """Single-image convenience: [C,H,W] sampled at [h,w,2] -> [C,h,w]."""
    return sample_batch(image[None], smap[None])[0]


def smap_grad_to_theta(grad_smaps: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Chain sample-map gradients back to the six transform parameters.

    grad_smaps is [N,h,w,2]; returns [N,6] where row t reads
    (sum gy*y, sum gy*x, sum gy, sum gx*y, sum gx*x, sum gx).
    """
    y = grid[..., 0]
    x = grid[..., 1]
    gy = grad_smaps[..., 0]
    gx = grad_smaps[..., 1]
    return np.stack(
        [
            (gy * y).sum(axis=(1, 2)),
            (gy * x).sum(axis=(1, 2)),
            gy.sum(axis=(1, 2)),
            (gx * y).sum(axis=(1, 2)),
            (gx * x).sum(axis=(1, 2)),
            gx.sum(axis=(1, 2)),
        ],
        axis=1,
    )


class AffineSampler:
    """Layer-style wrapper: crop a batch of images with per-example transforms.

    Keeps a cache stack like the other layers so it can run once per time step
    and be unwound in reverse.
    """

    def __init__(self, out_h: int, out_w: int, name: str = "sampler"):
        self.name = name
        self.grid = make_grid(out_h, out_w)
        self._cache: list = []

    def clear_cache(self):
        self._cache.clear()

    def forward(self, images, theta, train=False):
        smaps = transform_grid(theta, self.grid.astype(images.dtype))
        out = sample_batch(images, smaps)
        if train:
            self._cache.append((images, smaps))
        return out

    def backward(self, grad_out):
        if not self._cache:
            raise RuntimeError(f"{self.name}: backward called without a cached forward")
        images, smaps = self._cache.pop()
        grad_images, grad_smaps = sample_batch_backward(images, smaps, grad_out)
        grad_theta = smap_grad_to_theta(grad_smaps, self.grid)
        return grad_images, grad_theta.astype(images.dtype)
