"""Self-describing checkpoint container.

Layout: b"ECKP", u32 version, u64 header length, UTF-8 JSON header, then raw
little-endian tensor bytes. The header lists every tensor as
``{"name", "dtype", "shape", "offset", "nbytes"}`` with offsets relative to
the start of the data section, plus a free-form ``meta`` object.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"ECKP"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.uint8: "|u1",
    torch.bool: "|b1",
}
_TORCH = {v: k for k, v in _DTYPES.items()}


def save_checkpoint(path, states: dict[str, dict[str, torch.Tensor]], meta: dict) -> None:
    """Write named state dicts (e.g. {"net": model.state_dict()}) and metadata."""
    index, chunks, offset = [], [], 0
    for group in states:
        for name, t in states[group].items():
            t = t.detach().cpu().contiguous()
            if t.dtype not in _DTYPES:
                raise CheckpointError(f"unsupported dtype {t.dtype} for {group}.{name}")
            raw = t.numpy().astype(_DTYPES[t.dtype], copy=False).tobytes()
            index.append({"name": f"{group}.{name}", "dtype": _DTYPES[t.dtype], "shape": list(t.shape),
                          "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
    header = json.dumps({"meta": meta, "groups": list(states), "tensors": index}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict[str, dict[str, torch.Tensor]], dict]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC or version != VERSION:
        raise CheckpointError(f"{path}: not an ECKP v{VERSION} checkpoint")
    header = json.loads(data[_PREFIX.size:_PREFIX.size + hlen])
    body = memoryview(data)[_PREFIX.size + hlen:]
    states: dict[str, dict[str, torch.Tensor]] = {g: {} for g in header["groups"]}
    for entry in header["tensors"]:
        group, name = entry["name"].split(".", 1)
        raw = body[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{path}: tensor {entry['name']} truncated")
        arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
        states[group][name] = torch.from_numpy(arr).to(_TORCH[entry["dtype"]])
    return states, header["meta"]
