"""Dataset files: length-prefixed CRC-checked binary records plus a JSON
sidecar index for random access.

File header: 8-byte magic | u32 version | u64 sample count.
Each record: u32 payload length | payload | u32 crc32(payload).
Payload, little-endian throughout:
    u32 n1, u32 n2
    f32[n1*3] cloud1, f32[n2*3] cloud2
    f64[12]   gt(tx, ty, yaw), center1, center2, heading1, heading2, distance
    u16-prefixed utf-8 class label, u16-prefixed utf-8 mesh id
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..geom import GroundTransform
from .scene import SceneSample

_MAGIC = b"PCALDSET"
_VERSION = 1


def _sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string field too long")
    return struct.pack("<H", len(raw)) + raw


def _pack_record(s: SceneSample) -> bytes:
    c1 = np.ascontiguousarray(s.cloud1, dtype="<f4")
    c2 = np.ascontiguousarray(s.cloud2, dtype="<f4")
    scalars = np.array(
        [
            s.gt.tx, s.gt.ty, s.gt.yaw,
            s.center1[0], s.center1[1], s.center1[2],
            s.center2[0], s.center2[1], s.center2[2],
            s.heading1, s.heading2, s.distance_d,
        ],
        dtype="<f8",
    )
    return b"".join(
        [
            struct.pack("<II", len(c1), len(c2)),
            c1.tobytes(),
            c2.tobytes(),
            scalars.tobytes(),
            _pack_str(s.class_label),
            _pack_str(s.mesh_id),
        ]
    )


def write_dataset(samples, path, config: dict | None = None) -> None:
    """Write samples plus the sidecar index; cloud coordinates are stored
    as 32-bit floats (lossless only for values already at that precision)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    offsets = []
    labels = []
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(samples)))
        for s in samples:
            offsets.append(fh.tell())
            payload = _pack_record(s)
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)
            fh.write(struct.pack("<I", zlib.crc32(payload)))
            labels.append(s.class_label)
    index = {
        "format": "pcalign-dataset",
        "version": _VERSION,
        "count": len(samples),
        "offsets": offsets,
        "class_labels": labels,
        "config": config,
    }
    _sidecar_path(path).write_text(json.dumps(index, indent=2, sort_keys=True))


def _unpack_record(payload: bytes, where: str) -> SceneSample:
    off = 0

    def take(n):
        nonlocal off
        chunk = payload[off : off + n]
        if len(chunk) != n:
            raise ValueError(f"{where}: truncated record payload")
        off += n
        return chunk

    n1, n2 = struct.unpack("<II", take(8))
    cloud1 = np.frombuffer(take(12 * n1), dtype="<f4").reshape(n1, 3).astype(np.float64)
    cloud2 = np.frombuffer(take(12 * n2), dtype="<f4").reshape(n2, 3).astype(np.float64)
    scalars = np.frombuffer(take(96), dtype="<f8")
    (cl_len,) = struct.unpack("<H", take(2))
    class_label = take(cl_len).decode("utf-8")
    (mid_len,) = struct.unpack("<H", take(2))
    mesh_id = take(mid_len).decode("utf-8")
    return SceneSample(
        cloud1=cloud1,
        cloud2=cloud2,
        gt=GroundTransform(scalars[0], scalars[1], scalars[2]),
        center1=scalars[3:6].copy(),
        center2=scalars[6:9].copy(),
        heading1=float(scalars[9]),
        heading2=float(scalars[10]),
        distance_d=float(scalars[11]),
        class_label=class_label,
        mesh_id=mesh_id,
    )


def read_dataset(path) -> list[SceneSample]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file {path} does not exist")
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a dataset file (bad magic)")
        version, count = struct.unpack("<IQ", fh.read(12))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        samples = []
        for i in range(count):
            head = fh.read(4)
            if len(head) != 4:
                raise ValueError(f"{path}: truncated at record {i}")
            (plen,) = struct.unpack("<I", head)
            payload = fh.read(plen)
            tail = fh.read(4)
            if len(payload) != plen or len(tail) != 4:
                raise ValueError(f"{path}: truncated at record {i}")
            (crc,) = struct.unpack("<I", tail)
            if zlib.crc32(payload) != crc:
                raise ValueError(f"{path}: checksum mismatch in record {i}")
            samples.append(_unpack_record(payload, f"{path} record {i}"))
    return samples


def read_dataset_index(path) -> dict:
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise FileNotFoundError(f"dataset index {sidecar} does not exist")
    return json.loads(sidecar.read_text())
