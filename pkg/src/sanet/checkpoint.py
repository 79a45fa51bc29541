"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SANETCKPT"            magic
    u32                     format version
    u32                     header length L
    L bytes                 UTF-8 JSON: {"config", "step", "extra", "manifest"}
    payload                 float32 little-endian arrays, back to back

Each manifest entry is ``[name, dtype, shape, offset]`` with ``offset``
counted from the start of the payload. Parameters and batch-norm buffers
are both stored.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .network import SANet, SANetConfig, build

MAGIC = b"SANETCKPT"
VERSION = 1
_PAYLOAD_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: SANet, step: int = 0, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    manifest, chunks, offset = [], [], 0
    for name, arr in model.state_dict().items():
        buf = np.ascontiguousarray(arr, dtype=_PAYLOAD_DTYPE).tobytes()
        manifest.append([name, "float32", list(arr.shape), offset])
        chunks.append(buf)
        offset += len(buf)
    header = json.dumps(
        {"config": model.config.to_dict(), "step": int(step), "extra": extra or {}, "manifest": manifest},
        sort_keys=True,
    ).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Header dict and the stored arrays, without building a model."""
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    if len(raw) < pos + 8:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<II", raw, pos)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos += 8
    try:
        header = json.loads(raw[pos : pos + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    payload = memoryview(raw)[pos + hlen :]
    arrays = {}
    for name, dtype, shape, offset in header["manifest"]:
        if dtype != "float32":
            raise CheckpointError(f"{path}: {name} has unsupported dtype {dtype}")
        n = int(np.prod(shape, dtype=np.int64))
        end = offset + 4 * n
        if end > len(payload):
            raise CheckpointError(f"{path}: payload for {name} is truncated")
        arrays[name] = np.frombuffer(payload[offset:end], dtype=_PAYLOAD_DTYPE).reshape(shape)
    return header, arrays


def load_checkpoint(path, dtype=np.float32) -> tuple[SANet, dict]:
    """Rebuild the model from the stored config and load every array.

    Shapes are validated against the freshly built model.
    """
    header, arrays = read_checkpoint(path)
    config = SANetConfig.from_dict(header["config"])
    model = build(config, seed=0, dtype=dtype)
    try:
        model.load_state_dict(arrays)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return model, header
