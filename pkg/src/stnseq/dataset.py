"""Cluttered digit-sequence canvases and their on-disk format.

Each example places three digits left to right on a 100x100 canvas along a
random slope of at most 45 degrees, with non-overlapping bounding boxes, then
splatters eight 9x9 clutter crops taken from random pool digits. Compositing
uses the pixel-wise maximum, which keeps intensities in [0, 1]. A master seed
is split into one RNG stream per example, so generation is reproducible
record-by-record no matter how the work is scheduled.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import config
from .mnist import DigitPool
from .tensor import FormatError

CANVAS = 100
DIGIT = 28
SEQ_LEN = 3
CLUTTER_COUNT = 8
CLUTTER_SIZE = 9
MAX_GAP = 12
MAX_SLOPE_DEG = 45.0
MAX_PLACE_ATTEMPTS = 100

DATASET_MAGIC = b"CMSQ"
DATASET_VERSION = 1


class PlacementError(RuntimeError):
    """Digit placement failed repeatedly; points at a broken RNG or geometry bug."""


@dataclass
class SequenceExample:
    canvas: np.ndarray  # float64 [100, 100] in [0, 1]
    labels: np.ndarray  # uint8 [3], left-to-right
    corners: np.ndarray  # uint8 [3, 2] as (y, x) top-left per digit
    slope_deg: float


def generate_example(rng: np.random.Generator, pool: DigitPool, slope_deg: float | None = None) -> SequenceExample:
    """Compose one canvas. ``slope_deg`` forces the slope (test hook)."""
    picks = rng.integers(0, len(pool), size=SEQ_LEN)
    span_limit = CANVAS - DIGIT  # top-left coordinates live in [0, 72]

    for _ in range(MAX_PLACE_ATTEMPTS):
        slope = rng.uniform(-MAX_SLOPE_DEG, MAX_SLOPE_DEG) if slope_deg is None else float(slope_deg)
        gaps = rng.integers(0, MAX_GAP + 1, size=SEQ_LEN - 1)
        span = SEQ_LEN * DIGIT + int(gaps.sum())
        if span > CANVAS:
            continue
        x1 = int(rng.integers(0, CANVAS - span + 1))
        xs = [x1]
        for g in gaps:
            xs.append(xs[-1] + DIGIT + int(g))
        t = math.tan(math.radians(slope))
        offsets = [0]
        for i in range(SEQ_LEN - 1):
            offsets.append(offsets[-1] + round(t * (xs[i + 1] - xs[i])))
        lo = -min(offsets)
        hi = span_limit - max(offsets)
        if lo > hi:
            continue
        y1 = int(rng.integers(lo, hi + 1))
        ys = [y1 + o for o in offsets]
        break
    else:
        raise PlacementError(
            f"no feasible digit placement after {MAX_PLACE_ATTEMPTS} attempts"
        )

    canvas = np.zeros((CANVAS, CANVAS))
    for k in range(SEQ_LEN):
        y, x = ys[k], xs[k]
        region = canvas[y : y + DIGIT, x : x + DIGIT]
        np.maximum(region, pool.images[picks[k]], out=region)

    for _ in range(CLUTTER_COUNT):
        src = pool.images[rng.integers(0, len(pool))]
        cy, cx = rng.integers(0, DIGIT - CLUTTER_SIZE + 1, size=2)
        patch = src[cy : cy + CLUTTER_SIZE, cx : cx + CLUTTER_SIZE]
        py, px = rng.integers(0, CANVAS - CLUTTER_SIZE + 1, size=2)
        region = canvas[py : py + CLUTTER_SIZE, px : px + CLUTTER_SIZE]
        np.maximum(region, patch, out=region)

    return SequenceExample(
        canvas=canvas,
        labels=pool.labels[picks].astype(np.uint8),
        corners=np.asarray(list(zip(ys, xs)), dtype=np.uint8),
        slope_deg=float(slope),
    )


def example_streams(seed: int, count: int):
    """One independent RNG per example index, all derived from the master seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def generate_examples(pool: DigitPool, count: int, seed: int):
    for stream in example_streams(seed, count):
        yield generate_example(stream, pool)


# --- the CMSQ container -------------------------------------------------------


@dataclass
class SequenceDataset:
    """In-memory mirror of one dataset file."""

    canvases: np.ndarray  # uint8 [N, 100, 100]
    labels: np.ndarray  # uint8 [N, 3]
    corners: np.ndarray  # uint8 [N, 3, 2]
    slopes: np.ndarray  # float64 [N]

    def __len__(self):
        return len(self.canvases)

    def example_tensors(self, indices=None):
        """Canvases as [n, 1, 100, 100] in the active dtype plus int labels."""
        idx = slice(None) if indices is None else indices
        x = self.canvases[idx].astype(config.dtype()) / 255.0
        return x[:, None, :, :], self.labels[idx].astype(np.int64)

    def batches(self, batch_size: int, shuffle_seed: int | None = None):
        """Seeded permutation into batches; the final short batch is kept."""
        n = len(self)
        order = (
            np.arange(n)
            if shuffle_seed is None
            else np.random.default_rng(shuffle_seed).permutation(n)
        )
        for start in range(0, n, batch_size):
            chunk = order[start : start + batch_size]
            yield self.example_tensors(chunk)


def quantize_canvas(canvas: np.ndarray) -> np.ndarray:
    return np.round(canvas * 255.0).astype(np.uint8)


def dataset_from_examples(examples) -> SequenceDataset:
    examples = list(examples)
    return SequenceDataset(
        canvases=np.stack([quantize_canvas(e.canvas) for e in examples]),
        labels=np.stack([e.labels for e in examples]),
        corners=np.stack([e.corners for e in examples]),
        slopes=np.asarray([e.slope_deg for e in examples]),
    )


def write_dataset(path, dataset: SequenceDataset) -> None:
    n = len(dataset)
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(
            struct.pack(
                "<BIHHB", DATASET_VERSION, n, CANVAS, CANVAS, SEQ_LEN
            )
        )
        for i in range(n):
            f.write(dataset.canvases[i].tobytes())
            f.write(dataset.labels[i].tobytes())
            f.write(dataset.corners[i].tobytes())
            f.write(struct.pack("<d", float(dataset.slopes[i])))


def read_dataset(path) -> SequenceDataset:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != DATASET_MAGIC:
            raise FormatError(f"{path}: bad dataset magic {magic!r}")
        header = f.read(10)
        if len(header) != 10:
            raise FormatError(f"{path}: truncated dataset header")
        version, count, h, w, seq = struct.unpack("<BIHHB", header)
        if version != DATASET_VERSION:
            raise FormatError(f"{path}: unsupported dataset version {version}")
        if (h, w, seq) != (CANVAS, CANVAS, SEQ_LEN):
            raise FormatError(f"{path}: unexpected geometry {h}x{w} seq={seq}")
        record = h * w + seq + seq * 2 + 8
        raw = f.read(record * count)
        if len(raw) != record * count:
            raise FormatError(f"{path}: expected {count} records, file is short")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} records")
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(count, record)
    canvases = rows[:, : h * w].reshape(count, h, w)
    labels = rows[:, h * w : h * w + seq]
    corners = rows[:, h * w + seq : h * w + seq * 3].reshape(count, seq, 2)
    slopes = np.frombuffer(
        np.ascontiguousarray(rows[:, h * w + seq * 3 :]).tobytes(), dtype="<f8"
    )
    return SequenceDataset(
        canvases=canvases.copy(),
        labels=labels.copy(),
        corners=corners.copy(),
        slopes=slopes.astype(np.float64),
    )


def generate_dataset_file(path, pool: DigitPool, count: int, seed: int) -> SequenceDataset:
    ds = dataset_from_examples(generate_examples(pool, count, seed))
    write_dataset(path, ds)
    return ds
