"""Binary checkpoint: magic, version, JSON manifest, then raw little-endian buffers.

Layout::

    b"TRKCKPT\\0"            8 bytes
    version                  uint32 LE
    manifest length          uint32 LE
    manifest                 UTF-8 JSON {"meta": {...}, "params": [{name, shape, dtype}, ...]}
    buffers                  concatenated, in manifest order
"""
from __future__ import annotations

import io
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"TRKCKPT\0"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    pass


def dumps(state: dict, meta: dict | None = None) -> bytes:
    manifest = {"meta": meta or {}, "params": []}
    chunks = []
    for name, value in state.items():
        arr = np.asarray(value)
        dtype = arr.dtype.name
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype} for {name!r}")
        manifest["params"].append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(header)) + header + b"".join(chunks)


def loads(data: bytes):
    """Returns (state: OrderedDict name -> ndarray, meta: dict)."""
    if data[:8] != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    if len(data) < 16:
        raise CheckpointError("truncated checkpoint header")
    version, header_len = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        manifest = json.loads(data[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from exc
    stream = io.BytesIO(data[16 + header_len:])
    state = OrderedDict()
    for entry in manifest["params"]:
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        raw = stream.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            raise CheckpointError(f"truncated buffer for {entry['name']!r}")
        state[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).astype(entry["dtype"])
    return state, manifest["meta"]


def save(path, state: dict, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(state, meta))


def load(path):
    return loads(Path(path).read_bytes())


def check_manifest(state: dict, expected: dict, names=None) -> None:
    """Reject a checkpoint whose entries do not match ``expected`` in name, shape and dtype."""
    names = list(expected) if names is None else list(names)
    for name in names:
        if name not in state:
            raise CheckpointError(f"checkpoint lacks {name!r}")
        got, want = state[name], expected[name]
        if got.shape != want.shape or got.dtype != want.dtype:
            raise CheckpointError(
                f"manifest mismatch for {name!r}: {got.dtype}{list(got.shape)} "
                f"vs model {want.dtype}{list(want.shape)}")
