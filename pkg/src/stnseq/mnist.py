"""IDX-format digit loading and the digit pools the generator draws from."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .tensor import FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _open(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def _read_exact(f, n, path):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"{path}: truncated at offset {f.tell() - len(buf)}")
    return buf


def load_idx_images(path) -> np.ndarray:
    """Images as uint8 [N, rows, cols]; big-endian header per the IDX layout."""
    with _open(path) as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, path))
        if magic != IMAGE_MAGIC:
            raise FormatError(f"{path}: bad image magic 0x{magic:08x}")
        raw = _read_exact(f, count * rows * cols, path)
    return np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)


def load_idx_labels(path) -> np.ndarray:
    with _open(path) as f:
        magic, count = struct.unpack(">II", _read_exact(f, 8, path))
        if magic != LABEL_MAGIC:
            raise FormatError(f"{path}: bad label magic 0x{magic:08x}")
        raw = _read_exact(f, count, path)
    return np.frombuffer(raw, dtype=np.uint8).copy()


@dataclass
class DigitPool:
    """Digits the canvas generator samples from, intensities already in [0, 1]."""

    images: np.ndarray  # float64 [M, 28, 28]
    labels: np.ndarray  # uint8 [M]

    def __post_init__(self):
        if self.images.ndim != 3 or self.images.shape[1:] != (28, 28):
            raise ValueError(f"digit pool images must be [M,28,28], got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"image/label count mismatch: {len(self.images)} vs {len(self.labels)}"
            )
        if len(self.images) == 0:
            raise ValueError("digit pool is empty")
        lo, hi = float(self.images.min()), float(self.images.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"digit intensities must lie in [0,1], found [{lo}, {hi}]")

    def __len__(self):
        return len(self.images)


def load_mnist(image_path, label_path) -> DigitPool:
    """One split of the digit corpus: scaled images plus checked labels."""
    images = load_idx_images(image_path)
    labels = load_idx_labels(label_path)
    if len(images) != len(labels):
        raise FormatError(
            f"image count {len(images)} does not match label count {len(labels)}"
        )
    return DigitPool(images.astype(np.float64) / 255.0, labels)


def split_train_pools(pool: DigitPool, val_count: int = 10000) -> tuple[DigitPool, DigitPool]:
    """Carve a validation pool off the end of the training digits.

    The source corpus has no validation split of its own, so the last
    ``val_count`` training digits become the validation pool and the rest stay
    for training; generated splits then draw from disjoint digit sets.
    """
    if not 0 < val_count < len(pool):
        raise ValueError(
            f"val_count must be in (0, {len(pool)}), got {val_count}"
        )
    cut = len(pool) - val_count
    return (
        DigitPool(pool.images[:cut], pool.labels[:cut]),
        DigitPool(pool.images[cut:], pool.labels[cut:]),
    )
