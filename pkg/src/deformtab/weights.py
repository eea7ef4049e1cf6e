"""Binary weight files: a length-prefixed JSON header followed by little-endian float32 data.

Layout::

    uint32 LE   header byte length
    bytes       UTF-8 JSON {"dtype": "<f4", "tensors": [{"name", "shape", "offset", "count"}]}
    bytes       concatenated tensor values, offsets counted in elements
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DecodeError, ShapeError

__all__ = ["pack_weights", "unpack_weights", "save_weights", "load_weights"]

_DTYPE = "<f4"


def pack_weights(named: dict) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(named):
        arr = np.asarray(getattr(named[name], "data", named[name]), dtype=_DTYPE)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.size
    header = json.dumps({"dtype": _DTYPE, "tensors": entries}, sort_keys=True).encode("utf-8")
    return struct.pack("<I", len(header)) + header + b"".join(chunks)


def unpack_weights(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 4:
        raise DecodeError("weight file shorter than its length prefix", 0)
    (hlen,) = struct.unpack_from("<I", blob, 0)
    if 4 + hlen > len(blob):
        raise DecodeError(f"header length {hlen} runs past end of file", 0)
    try:
        header = json.loads(blob[4:4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"weight header is not valid JSON: {exc}", 4) from None
    if header.get("dtype") != _DTYPE:
        raise DecodeError(f"unsupported dtype {header.get('dtype')!r}", 4)
    data_start = 4 + hlen
    values = np.frombuffer(blob, dtype=_DTYPE, offset=data_start, count=(len(blob) - data_start) // 4)
    out = {}
    for entry in header.get("tensors", []):
        shape, off, count = tuple(entry["shape"]), entry["offset"], entry["count"]
        if int(np.prod(shape, dtype=np.int64)) != count:
            raise DecodeError(f"tensor {entry['name']!r}: shape {shape} does not hold {count} values", 4)
        if off < 0 or off + count > values.size:
            raise DecodeError(f"tensor {entry['name']!r} extends past the data section", data_start + 4 * off)
        out[entry["name"]] = values[off:off + count].astype(np.float32).reshape(shape)
    return out


def save_weights(path, named: dict) -> None:
    Path(path).write_bytes(pack_weights(named))


def load_weights(path) -> dict[str, np.ndarray]:
    return unpack_weights(Path(path).read_bytes())


def assign(params: dict, loaded: dict) -> None:
    """Copy ``loaded`` arrays into the tensors of ``params`` in place, checking shapes."""
    missing = sorted(set(params) - set(loaded))
    if missing:
        raise ShapeError(f"weights missing for: {', '.join(missing)}")
    for name, tensor in params.items():
        arr = loaded[name]
        if arr.shape != tensor.shape:
            raise ShapeError(f"{name}: stored shape {arr.shape} does not match {tensor.shape}")
        tensor.data = arr.astype(tensor.dtype)
