"""Single-file checkpoint container.

Layout::

    b"FSTGCKPT"                 8-byte magic
    uint64 little-endian        header length in bytes
    JSON header (utf-8)         {schema_version, d, d_emb, h, w, N, tensors: [...], ...}
    tensor payload              little-endian fp32, concatenated in header order

Tensor names are namespaced by module: ``backbone.``, ``head.``,
``recognizer.``, ``enhancement.``. Boolean buffers are stored as 0/1 floats.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import DataError

MAGIC = b"FSTGCKPT"
SCHEMA_VERSION = 1


def save_checkpoint(path, state_dict: dict, header: dict):
    path = Path(path)
    entries, blobs, offset = [], [], 0
    for name, tensor in state_dict.items():
        arr = tensor.detach().cpu().to(torch.float32).numpy().astype("<f4", copy=False)
        raw = np.ascontiguousarray(arr).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw),
                        "dtype": str(tensor.dtype).replace("torch.", "")})
        blobs.append(raw)
        offset += len(raw)
    head = dict(header)
    head["schema_version"] = SCHEMA_VERSION
    head["tensors"] = entries
    encoded = json.dumps(head, sort_keys=True).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(encoded)))
            fh.write(encoded)
            for raw in blobs:
                fh.write(raw)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path):
    """Return ``(state_dict, header)``."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:8] != MAGIC:
        raise DataError(f"{path} is not a checkpoint file")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + n].decode("utf-8"))
    if header.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported checkpoint schema {header.get('schema_version')}")
    base = 16 + n
    state = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        arr = np.frombuffer(data[start : start + entry["nbytes"]], dtype="<f4").reshape(entry["shape"])
        t = torch.from_numpy(arr.copy())
        dtype = getattr(torch, entry.get("dtype", "float32"))
        state[entry["name"]] = t.to(dtype)
    return state, header
