"""Checkpoint and tensor-bundle files.

Layout (all integers little-endian)::

    offset  size  content
    0       8     magic  b"SWAPCKPT"
    8       4     uint32 format version (currently 1)
    12      8     uint64 header length H
    20      H     UTF-8 JSON header (sorted keys, no whitespace)
    20+H    ...   tensor payload: float64 little-endian, row-major,
                  concatenated in header order

The header holds ``kind`` (``"checkpoint"`` or ``"bundle"``), ``meta`` (free
JSON: model spec, RNG stream states, run labels) and ``tensors``: a list of
``{"name", "group", "shape", "offset"}`` with ``offset`` in bytes from the
start of the payload. Checkpoints use the groups ``param``, ``bn`` and
optionally ``velocity``. Files contain no timestamps, so a given state always
serializes to the same bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ParseError
from .nn import ModelSpec, WeightVector, check_model

MAGIC = b"SWAPCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def write_bundle(path: str | Path, tensors: list[tuple[str, str, np.ndarray]],
                 meta: Mapping[str, Any], kind: str = "bundle") -> None:
    entries, blobs, offset = [], [], 0
    for name, group, arr in tensors:
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "group": group, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"kind": kind, "meta": meta, "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def read_bundle(path: str | Path) -> tuple[dict, list[tuple[str, str, np.ndarray]]]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise ParseError(f"{path}: file too short for a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise ParseError(f"{path}: not a swaplab checkpoint (bad magic)")
    if version != VERSION:
        raise ParseError(f"{path}: unsupported format version {version}")
    start = _PREFIX.size
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    payload = memoryview(raw)[start + hlen:]
    tensors = []
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        end = e["offset"] + 8 * count
        if end > len(payload):
            raise ParseError(f"{path}: tensor {e['name']} runs past end of file")
        arr = np.frombuffer(payload[e["offset"]:end], dtype="<f8").reshape(e["shape"])
        tensors.append((e["name"], e["group"], arr.astype(np.float64)))
    return header, tensors


@dataclass
class Checkpoint:
    model: WeightVector
    spec: ModelSpec
    velocity: dict[str, np.ndarray] | None = None
    rng_streams: list[dict] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: str | Path, model: WeightVector, spec: ModelSpec,
                    velocity: Mapping[str, np.ndarray] | None = None,
                    rng_streams: list[dict] | None = None,
                    meta: Mapping[str, Any] | None = None) -> None:
    check_model(model, spec)
    tensors = [(k, "param", v) for k, v in model.params.items()]
    tensors += [(k, "bn", v) for k, v in model.bn_stats.items()]
    if velocity is not None:
        tensors += [(k, "velocity", velocity[k]) for k in model.params]
    full_meta = {"spec": spec.to_dict(), "rng_streams": list(rng_streams or []),
                 "extra": dict(meta or {})}
    write_bundle(path, tensors, full_meta, kind="checkpoint")


def load_checkpoint(path: str | Path) -> Checkpoint:
    header, tensors = read_bundle(path)
    if header.get("kind") != "checkpoint":
        raise ParseError(f"{path}: file is a {header.get('kind')!r}, not a checkpoint")
    spec = ModelSpec.from_dict(header["meta"]["spec"])
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "bn": {}, "velocity": {}}
    for name, group, arr in tensors:
        groups.setdefault(group, {})[name] = arr
    model = WeightVector(groups["param"], groups["bn"])
    check_model(model, spec)
    return Checkpoint(model, spec, groups["velocity"] or None,
                      header["meta"].get("rng_streams", []), header["meta"].get("extra", {}))
