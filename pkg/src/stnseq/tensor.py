"""Dense array operations with strict shape contracts, plus the binary tensor record.

Arrays are plain numpy ndarrays in the globally configured dtype. These wrappers
exist to pin down the contracts the rest of the stack relies on: no implicit
broadcasting beyond scalars, shape mismatches rejected loudly, and a fixed
little-endian on-disk record used by checkpoints and the dataset format.
"""

from __future__ import annotations

import struct

import numpy as np

from . import config

TENSOR_MAGIC = b"TNSR"
TENSOR_VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class FormatError(ValueError):
    """A binary file does not match its declared layout."""


class NonFiniteError(FloatingPointError):
    """NaN or Inf detected where all values must be finite."""


def tensor(data, dtype=None) -> np.ndarray:
    """Materialize ``data`` as an array in the active (or given) dtype."""
    return np.asarray(data, dtype=dtype or config.dtype())


def zeros(shape, dtype=None) -> np.ndarray:
    return np.zeros(shape, dtype=dtype or config.dtype())


def _check_binary(a, b, op):
    if np.isscalar(b) or getattr(b, "ndim", None) == 0:
        return False
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes differ, {a.shape} vs {b.shape}")
    return True


def add(a, b):
    _check_binary(a, b, "add")
    return a + b


def sub(a, b):
    _check_binary(a, b, "sub")
    return a - b


def mul(a, b):
    _check_binary(a, b, "mul")
    return a * b


def scale(a, s):
    return a * s


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x)
    out = np.empty_like(x, dtype=x.dtype if x.dtype.kind == "f" else config.dtype())
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x):
    return np.tanh(x)


def relu(x):
    return np.maximum(x, 0.0)


def matmul(a, b) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: rank-2 operands required, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} vs {b.shape}")
    return a @ b


def _check_axis(t, axis):
    if axis is not None and not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"axis {axis} out of range for rank-{t.ndim} tensor")


def reduce_sum(t, axis=None):
    _check_axis(t, axis)
    return np.sum(t, axis=axis)


def reduce_max(t, axis=None):
    _check_axis(t, axis)
    if t.size == 0:
        raise ShapeError("max over an empty tensor is undefined")
    return np.max(t, axis=axis)


def argmax(t, axis=None):
    _check_axis(t, axis)
    if t.size == 0:
        raise ShapeError("argmax over an empty tensor is undefined")
    return np.argmax(t, axis=axis)


def require_finite(name: str, arr) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {name}")


def write_tensor(f, arr: np.ndarray) -> None:
    """Append one tensor record: magic, version u8, rank u8, shape u32le list,
    dtype tag u8 (0=f32, 1=f64), then raw little-endian data."""
    arr = np.ascontiguousarray(arr)
    tag = _DTYPE_TAGS.get(arr.dtype)
    if tag is None:
        raise FormatError(f"unsupported tensor dtype {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("tensor rank exceeds record limit")
    f.write(TENSOR_MAGIC)
    f.write(struct.pack("<BB", TENSOR_VERSION, arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(struct.pack("<B", tag))
    f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated tensor record while reading {what} at offset {f.tell() - len(buf)}")
    return buf


def read_tensor(f) -> np.ndarray:
    magic = _read_exact(f, 4, "magic")
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    version, rank = struct.unpack("<BB", _read_exact(f, 2, "header"))
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor record version {version}")
    shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "shape"))
    (tag,) = struct.unpack("<B", _read_exact(f, 1, "dtype tag"))
    if tag not in _TAG_DTYPES:
        raise FormatError(f"unknown dtype tag {tag}")
    dt = _TAG_DTYPES[tag]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    raw = _read_exact(f, count * dt.itemsize, "data")
    return np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        write_tensor(f, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f)
