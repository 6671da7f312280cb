"""Versioned binary block container used by model files.

Layout: one magic line (``<MAGIC>\\n``), an 8-byte little-endian header
length, a canonical JSON header describing metadata and array blocks, then
the raw C-order array bytes in header order. Canonical JSON (sorted keys,
no whitespace) plus fixed array ordering makes save -> load -> save
bit-exact, which the model-file contracts require.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np


class ModelFileError(ValueError):
    """Raised for unreadable, truncated, or version-mismatched model files."""


def write_blocks(
    path: str | Path,
    magic: str,
    meta: dict,
    arrays: dict[str, np.ndarray],
) -> int:
    """Write a container file; returns the serialized byte size."""
    payload = serialize_blocks(magic, meta, arrays)
    Path(path).write_bytes(payload)
    return len(payload)


def serialize_blocks(magic: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    blocks = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        blocks.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)}
        )
    header = json.dumps(
        {"meta": meta, "arrays": blocks},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    out = bytearray()
    out += magic.encode("ascii") + b"\n"
    out += struct.pack("<Q", len(header))
    out += header
    for block in blocks:
        out += np.ascontiguousarray(arrays[block["name"]]).tobytes()
    return bytes(out)


def read_blocks(path: str | Path, magic: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container file, validating magic, sizes, and completeness."""
    raw = Path(path).read_bytes()
    return deserialize_blocks(raw, magic, source=str(path))


def deserialize_blocks(
    raw: bytes, magic: str, source: str = "<bytes>"
) -> tuple[dict, dict[str, np.ndarray]]:
    magic_line = magic.encode("ascii") + b"\n"
    if not raw.startswith(magic_line):
        head = raw.split(b"\n", 1)[0][:64]
        raise ModelFileError(
            f"{source}: expected magic {magic!r}, found {head!r}"
        )
    offset = len(magic_line)
    if len(raw) < offset + 8:
        raise ModelFileError(f"{source}: truncated header")
    (header_len,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    if len(raw) < offset + header_len:
        raise ModelFileError(f"{source}: truncated header")
    try:
        header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"{source}: corrupt header ({exc})") from exc
    offset += header_len

    arrays: dict[str, np.ndarray] = {}
    for block in header["arrays"]:
        dtype = np.dtype(block["dtype"])
        shape = tuple(block["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        if len(shape) == 0:
            nbytes = dtype.itemsize
        if len(raw) < offset + nbytes:
            raise ModelFileError(f"{source}: truncated array block {block['name']!r}")
        arrays[block["name"]] = np.frombuffer(
            raw, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)), offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise ModelFileError(f"{source}: {len(raw) - offset} trailing bytes")
    return header["meta"], arrays


def read_magic(path: str | Path) -> str:
    """Return the magic line of a container file (without the newline)."""
    with open(path, "rb") as fh:
        first = fh.readline(128)
    if not first.endswith(b"\n"):
        raise ModelFileError(f"{path}: no magic line")
    try:
        return first[:-1].decode("ascii")
    except UnicodeDecodeError as exc:
        raise ModelFileError(f"{path}: binary magic line") from exc
