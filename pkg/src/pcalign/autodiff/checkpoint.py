"""Parameter checkpoint files.

Layout:  8-byte magic | u32 version | u64 header length | header JSON |
raw row-major tensor payloads.  The header carries a config echo plus one
entry per tensor (name, shape, dtype, byte offset into the payload).
Round-trips are bit-exact: payloads are written with tobytes() and read
back with frombuffer() at the recorded dtype.
"""

from __future__ import annotations

import json
import struct
from typing import Any

import numpy as np

from .tensor import Tensor

_MAGIC = b"PCALCKPT"
_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray], config: dict[str, Any]) -> None:
    entries = []
    payloads = []
    offset = 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value)
        raw = arr.tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.str,
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps({"config": config, "tensors": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    tensors = {}
    for entry in header["tensors"]:
        start = entry["offset"]
        raw = payload[start : start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise ValueError(f"{path}: truncated payload for tensor {entry['name']!r}")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()
    return tensors, header["config"]
