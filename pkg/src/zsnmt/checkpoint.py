"""Versioned named-tensor checkpoint container.

Layout::

    b"ZSNMTCK\\0"                 8-byte magic
    uint32 LE                    format version
    uint64 LE                    header length in bytes
    header                       UTF-8 JSON: version, step, config, meta,
                                 tensors=[{name, shape, offset, nbytes}]
    payload                      float32 little-endian, tensors back to back
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"ZSNMTCK\0"
VERSION = 1
_LE_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    config: dict
    tensors: dict[str, np.ndarray]
    step: int = 0
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint):
    entries, offset = [], 0
    blobs = []
    for name, arr in ckpt.tensors.items():
        blob = np.ascontiguousarray(arr, dtype=_LE_F32).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"version": VERSION, "step": int(ckpt.step), "config": ckpt.config,
                         "meta": ckpt.meta, "tensors": entries}, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)


def read_header(path) -> tuple[dict, int]:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise CheckpointError(f"{path}: not a zsnmt checkpoint")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
    return header, 20 + hlen


def load_checkpoint(path) -> Checkpoint:
    header, start = read_header(path)
    raw = Path(path).read_bytes()[start:]
    tensors = {}
    for e in header["tensors"]:
        chunk = raw[e["offset"]:e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated payload for {e['name']}")
        tensors[e["name"]] = np.frombuffer(chunk, dtype=_LE_F32).reshape(e["shape"]).copy()
    return Checkpoint(header["config"], tensors, header["step"], header.get("meta", {}))
