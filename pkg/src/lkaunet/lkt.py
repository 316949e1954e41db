"""LKT1 tensor files and directories of named tensors.

Layout: ``b"LKT1"``, version ``u8 = 1``, dtype code ``u8`` (0 float32,
1 float64, 2 uint8), ``ndim u8``, ``ndim`` little-endian ``u64`` dims, then
the row-major little-endian payload.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LKT1"
VERSION = 1
CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_CODE_OF = {dt: code for code, dt in CODES.items()}
INDEX_NAME = "index.json"


class LktError(ValueError):
    pass


def encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.kind == "f" else arr.dtype
    if dt not in _CODE_OF:
        raise LktError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise LktError("too many dimensions")
    header = MAGIC + struct.pack("<BBB", VERSION, _CODE_OF[dt], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=dt).tobytes()


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise LktError("bad magic")
    version, code, ndim = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise LktError(f"unsupported version {version}")
    if code not in CODES:
        raise LktError(f"unsupported dtype code {code}")
    off = 7 + 8 * ndim
    if len(buf) < off:
        raise LktError("truncated header")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 7)
    dt = CODES[code]
    need = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    payload = buf[off:]
    if len(payload) < need:
        raise LktError(f"truncated payload: {len(payload)} of {need} bytes")
    if len(payload) > need:
        raise LktError(f"trailing bytes: {len(payload) - need} beyond payload")
    return np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def write_tensor(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode(arr))


def read_tensor(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def _file_name(name: str) -> str:
    return name.replace(os.sep, "_") + ".lkt"


def save_weights(directory, named: dict[str, np.ndarray]) -> None:
    """One LKT file per tensor plus ``index.json`` mapping names to files."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    index = {}
    for name in sorted(named):
        fname = _file_name(name)
        write_tensor(d / fname, named[name])
        index[name] = fname
    (d / INDEX_NAME).write_text(json.dumps({"schema_version": 1, "tensors": index}, indent=2, sort_keys=True))


def load_weights(directory) -> dict[str, np.ndarray]:
    d = Path(directory)
    meta = json.loads((d / INDEX_NAME).read_text())
    if meta.get("schema_version") != 1:
        raise LktError(f"unsupported weight index schema_version {meta.get('schema_version')}")
    return {name: read_tensor(d / fname) for name, fname in meta["tensors"].items()}
