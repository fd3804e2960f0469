"""Input checking shared by the estimator and the command-line surface."""

from __future__ import annotations

import numpy as np

from . import config


def check_canvas_batch(X, canvas=(100, 100)) -> np.ndarray:
    """Coerce canvases to [N, 1, H, W] in the active dtype.

    Accepts [N, H, W] or [N, 1, H, W]; uint8 input is rescaled from [0, 255].
    """
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[:, None, :, :]
    h, w = canvas
    if X.ndim != 4 or X.shape[1] != 1 or X.shape[2:] != (h, w):
        raise ValueError(
            f"expected canvases shaped [N,{h},{w}] or [N,1,{h},{w}], got {tuple(X.shape)}"
        )
    if X.dtype == np.uint8:
        return X.astype(config.dtype()) / 255.0
    X = X.astype(config.dtype(), copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("canvas values must be finite")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError("float canvases must have intensities in [0, 1]")
    return X


def check_sequence_labels(y, n: int, seq_len: int = 3) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n, seq_len):
        raise ValueError(f"expected labels shaped [{n},{seq_len}], got {tuple(y.shape)}")
    y = y.astype(np.int64)
    if y.min() < 0 or y.max() > 9:
        raise ValueError("labels must be digits in [0, 9]")
    return y
