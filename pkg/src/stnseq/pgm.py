"""Binary PGM (P5) reading and writing for grayscale inspection dumps."""

from __future__ import annotations

import numpy as np

from .tensor import FormatError


def write_pgm(path, image: np.ndarray) -> None:
    """Write a [H, W] image; float input is clipped to [0, 1] and scaled."""
    if image.ndim != 2:
        raise ValueError(f"PGM images are 2-d, got shape {image.shape}")
    if image.dtype != np.uint8:
        image = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM file")
    w, h = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise FormatError(f"{path}: unsupported max value")
    raw = parts[3]
    if len(raw) != h * w:
        raise FormatError(f"{path}: pixel payload is {len(raw)} bytes, expected {h * w}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
