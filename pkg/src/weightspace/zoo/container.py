"""The ``WZOO`` binary container.

Layout (little-endian)::

    b"WZOO" | u32 version | u64 metadata length | UTF-8 JSON metadata | raw payload

The payload is f32 unless the metadata carries ``"dtype": "float64"``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Tuple

import numpy as np

from .._io import atomic_write_bytes
from ..exceptions import ShapeError

MAGIC = b"WZOO"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


def pack_container(meta: dict, payload: np.ndarray) -> bytes:
    payload = np.asarray(payload)
    dtype = "float64" if payload.dtype == np.float64 else "float32"
    meta = dict(meta, dtype=dtype, payload_len=int(payload.size))
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = payload.astype("<f8" if dtype == "float64" else "<f4").tobytes()
    return _HEADER.pack(MAGIC, VERSION, len(blob)) + blob + body


def unpack_container(raw: bytes, source: str = "<bytes>") -> Tuple[dict, np.ndarray]:
    if len(raw) < _HEADER.size:
        raise ShapeError(f"{source}: truncated WZOO header")
    magic, version, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ShapeError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ShapeError(f"{source}: unsupported WZOO version {version}")
    start = _HEADER.size
    meta = json.loads(raw[start:start + mlen].decode("utf-8"))
    dtype = "<f8" if meta.get("dtype") == "float64" else "<f4"
    payload = np.frombuffer(raw[start + mlen:], dtype=dtype)
    if "payload_len" in meta and payload.size != meta["payload_len"]:
        raise ShapeError(f"{source}: payload has {payload.size} values, metadata says {meta['payload_len']}")
    return meta, payload.astype(np.float64 if dtype == "<f8" else np.float32)


def write_container(path, meta: dict, payload: np.ndarray) -> None:
    atomic_write_bytes(path, pack_container(meta, payload))


def read_container(path) -> Tuple[dict, np.ndarray]:
    return unpack_container(Path(path).read_bytes(), str(path))
