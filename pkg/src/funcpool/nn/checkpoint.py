"""SLMC checkpoints: ``b"SLMC" 0x01 | u32 header_len | JSON header | f64 LE params``.

The header lists the shape of every stored array so the payload can be split
without knowing the model type.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ..errors import FormatError

MAGIC = b"SLMC"
VERSION = 1
_PREFIX = struct.Struct("<4sBI")


def encode_checkpoint(header: dict[str, Any], arrays: Sequence[np.ndarray]) -> bytes:
    header = dict(header)
    header["shapes"] = [list(a.shape) for a in arrays]
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return _PREFIX.pack(MAGIC, VERSION, len(raw)) + raw + body


def decode_checkpoint(data: bytes) -> tuple[dict[str, Any], list[np.ndarray]]:
    if len(data) < _PREFIX.size:
        raise FormatError("file too short for a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}; not a model checkpoint")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = _PREFIX.size
    try:
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from None
    pos += hlen
    arrays = []
    for shape in header.pop("shapes", []):
        count = int(np.prod(shape)) if shape else 1
        if pos + 8 * count > len(data):
            raise FormatError("truncated checkpoint payload")
        arrays.append(np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64))
        pos += 8 * count
    if pos != len(data):
        raise FormatError("trailing bytes after checkpoint payload")
    return header, arrays


def save_checkpoint(path: str | Path, header: dict[str, Any], arrays: Sequence[np.ndarray]) -> None:
    Path(path).write_bytes(encode_checkpoint(header, arrays))


def load_checkpoint(path: str | Path) -> tuple[dict[str, Any], list[np.ndarray]]:
    return decode_checkpoint(Path(path).read_bytes())
