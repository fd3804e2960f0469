"""Model checkpoints: named tensor records behind a small manifest.

Layout: magic "CKPT", version u8, a length-prefixed UTF-8 JSON blob with the
model configuration, then the manifest (u32 record count followed by the
length-prefixed UTF-8 record names) and the tensor records themselves in
manifest order, each in the flat binary tensor format. The embedded config
makes a checkpoint self-contained for evaluation and rendering.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .models import ModelConfig, SequenceModel, build
from .tensor import FormatError, read_tensor, write_tensor

CHECKPOINT_MAGIC = b"CKPT"
CHECKPOINT_VERSION = 1


def _write_str(f, s: str) -> None:
    raw = s.encode("utf-8")
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)


def _read_str(f) -> str:
    buf = f.read(4)
    if len(buf) != 4:
        raise FormatError("truncated checkpoint while reading a string length")
    (n,) = struct.unpack("<I", buf)
    raw = f.read(n)
    if len(raw) != n:
        raise FormatError("truncated checkpoint while reading string data")
    return raw.decode("utf-8")


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<B", CHECKPOINT_VERSION))
        _write_str(f, json.dumps(meta or {}, sort_keys=True))
        names = list(tensors)
        f.write(struct.pack("<I", len(names)))
        for name in names:
            _write_str(f, name)
        for name in names:
            write_tensor(f, tensors[name])


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r} in {path}")
        ver = f.read(1)
        if len(ver) != 1 or ver[0] != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version in {path}")
        meta = json.loads(_read_str(f))
        buf = f.read(4)
        if len(buf) != 4:
            raise FormatError("truncated checkpoint manifest")
        (count,) = struct.unpack("<I", buf)
        names = [_read_str(f) for _ in range(count)]
        tensors = {name: read_tensor(f) for name in names}
    return tensors, meta


def save_model(path, model: SequenceModel) -> None:
    save_tensors(path, model.params(), {"config": model.config.to_dict()})


def load_model(path) -> SequenceModel:
    tensors, meta = load_tensors(path)
    if "config" not in meta:
        raise FormatError(f"checkpoint {path} carries no model configuration")
    raw = dict(meta["config"])
    raw["canvas"] = tuple(raw.get("canvas", (100, 100)))
    cfg = ModelConfig(**raw)
    model = build(cfg)
    params = model.params()
    if set(params) != set(tensors):
        missing = set(params) ^ set(tensors)
        raise FormatError(f"checkpoint parameter names do not match the model: {sorted(missing)[:5]}")
    for name, value in tensors.items():
        target = params[name]
        if target.shape != value.shape:
            raise FormatError(f"checkpoint tensor {name} has shape {value.shape}, expected {target.shape}")
        target[...] = value.astype(target.dtype)
    return model
