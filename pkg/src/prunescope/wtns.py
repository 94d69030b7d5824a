"""WTNS v1 weight container.

Layout::

    b"WTNS0001"                       8-byte magic
    u64 little-endian                 header length in bytes
    UTF-8 JSON header                 {"tensors": [{"name", "dims", "dtype", "byte_offset"}, ...]}
    payload                           tensors back to back, little-endian

``byte_offset`` counts from the start of the payload. ``dtype`` is ``f64``
or ``u8`` (used for masks).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"WTNS0001"
DTYPES = {"f64": np.dtype("<f8"), "u8": np.dtype("u1")}


def _dtype_name(arr: np.ndarray) -> str:
    if arr.dtype.kind == "f":
        return "f64"
    if arr.dtype.kind in "ub" or (arr.dtype.kind == "i" and arr.size and arr.min() >= 0 and arr.max() <= 255):
        return "u8"
    raise ParseError(f"cannot store dtype {arr.dtype} in WTNS")


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        kind = _dtype_name(arr)
        data = np.ascontiguousarray(arr, dtype=DTYPES[kind]).tobytes()
        entries.append({"name": name, "dims": list(arr.shape), "dtype": kind, "byte_offset": offset})
        chunks.append(data)
        offset += len(data)
    header = json.dumps({"tensors": entries}, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def decode(blob: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise ParseError(f"{source}: not a WTNS v1 file (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + hlen > len(blob):
        raise ParseError(f"{source}: header length {hlen} runs past end of file")
    try:
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
        entries = header["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"{source}: malformed header: {exc}") from None
    payload = memoryview(blob)[16 + hlen:]
    out: dict[str, np.ndarray] = {}
    for entry in entries:
        try:
            name, dims, kind, off = entry["name"], [int(x) for x in entry["dims"]], entry["dtype"], int(entry["byte_offset"])
        except (KeyError, TypeError, ValueError):
            raise ParseError(f"{source}: malformed tensor entry {entry!r}") from None
        if kind not in DTYPES:
            raise ParseError(f"{source}: tensor {name!r} has unsupported dtype {kind!r}")
        dtype = DTYPES[kind]
        count = int(np.prod(dims)) if dims else 1
        end = off + count * dtype.itemsize
        if off < 0 or end > len(payload):
            raise ParseError(f"{source}: tensor {name!r} runs past end of payload")
        arr = np.frombuffer(payload[off:end], dtype=dtype).reshape(dims).copy()
        out[name] = arr.astype(np.float64) if kind == "f64" else arr.astype(np.uint8)
    return out


def save(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(tensors))


def load(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    return decode(blob, str(path))


def model_tensors(model) -> dict[str, np.ndarray]:
    out = {}
    for i, w in enumerate(model.weights):
        out[f"layer{i}.weight"] = w[:-1]
        out[f"layer{i}.bias"] = w[-1]
    return out


def model_from_tensors(tensors: dict[str, np.ndarray], activation: str = "relu"):
    from .micronet import MlpModel

    weights = []
    i = 0
    while f"layer{i}.weight" in tensors:
        w = tensors[f"layer{i}.weight"]
        b = tensors.get(f"layer{i}.bias", np.zeros(w.shape[1]))
        weights.append(np.vstack([w, b.reshape(1, -1)]))
        i += 1
    if not weights:
        raise ParseError("no layer<i>.weight tensors found")
    dims = [weights[0].shape[0] - 1] + [w.shape[1] for w in weights]
    return MlpModel(dims, weights, activation)
