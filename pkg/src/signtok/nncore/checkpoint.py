"""Versioned binary checkpoint container.

Layout: magic "STK1", u32 version, u64 header length, canonical JSON header,
then the raw little-endian array payload. The header carries parameter
names/component tags/shapes/dtypes with payload offsets, plus optimizer
state, RNG states, and free-form metadata. Writing is byte-stable: equal
inputs produce equal files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

MAGIC = b"STK1"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray] = field(default_factory=dict)
    tags: dict[str, str] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer: dict | None = None
    rng: dict | None = None
    meta: dict = field(default_factory=dict)

    def tagged(self, tag: str) -> dict[str, np.ndarray]:
        return {n: a for n, a in self.params.items() if self.tags.get(n) == tag}

    def has_tag(self, tag: str) -> bool:
        return any(t == tag for t in self.tags.values())


def _encode_array(arr: np.ndarray, payload: bytearray) -> dict:
    arr = np.asarray(arr)
    shape = list(arr.shape)  # before ascontiguousarray, which promotes 0-d to 1-d
    le = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False)
    raw = le.tobytes()
    entry = {
        "shape": shape,
        "dtype": arr.dtype.str.replace(">", "<").replace("=", "<"),
        "offset": len(payload),
        "nbytes": len(raw),
    }
    payload.extend(raw)
    return entry


def _decode_array(entry: dict, payload: memoryview) -> np.ndarray:
    start, n = entry["offset"], entry["nbytes"]
    arr = np.frombuffer(payload[start:start + n], dtype=np.dtype(entry["dtype"]))
    return arr.reshape(entry["shape"]).copy()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    payload = bytearray()
    header = {
        "params": {
            name: {"tag": ckpt.tags.get(name, ""), **_encode_array(arr, payload)}
            for name, arr in sorted(ckpt.params.items())
        },
        "buffers": {
            name: _encode_array(arr, payload)
            for name, arr in sorted(ckpt.buffers.items())
        },
        "meta": ckpt.meta,
        "rng": ckpt.rng,
    }
    if ckpt.optimizer is not None:
        opt = dict(ckpt.optimizer)
        vel = opt.pop("velocity", {})
        header["optimizer"] = {
            "scalars": opt,
            "velocity": {
                name: _encode_array(arr, payload) for name, arr in sorted(vel.items())
            },
        }
    else:
        header["optimizer"] = None
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[4:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + hlen].decode())
    payload = memoryview(raw[16 + hlen:])
    ckpt = Checkpoint(meta=header.get("meta", {}), rng=header.get("rng"))
    for name, entry in header["params"].items():
        ckpt.params[name] = _decode_array(entry, payload)
        ckpt.tags[name] = entry.get("tag", "")
    for name, entry in header.get("buffers", {}).items():
        ckpt.buffers[name] = _decode_array(entry, payload)
    opt = header.get("optimizer")
    if opt is not None:
        ckpt.optimizer = dict(opt["scalars"])
        ckpt.optimizer["velocity"] = {
            name: _decode_array(entry, payload) for name, entry in opt["velocity"].items()
        }
    return ckpt
