"""Binary tensor container shared by weight archives, stats files and corpora.

Layout::

    8 bytes   magic b"PSHFTNSR"
    8 bytes   little-endian uint64: header length H
    H bytes   UTF-8 JSON header, space-padded so the payload starts 8-aligned
    ...       raw little-endian tensor payload

The header is ``{"format_version", "kind", "meta", "tensors"}`` where each
tensor entry carries ``name``, ``dtype`` (``"<f4"`` or ``"<f8"`` / ``"<i8"``),
``shape``, ``offset`` (relative to payload start) and ``nbytes``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import InvalidArgument

MAGIC = b"PSHFTNSR"
FORMAT_VERSION = 1
_DTYPES = {"<f4", "<f8", "<i8"}


def write_container(
    path: str | Path,
    kind: str,
    tensors: Mapping[str, np.ndarray],
    meta: Mapping[str, Any] | None = None,
    dtype: str = "<f4",
) -> None:
    """Write ``tensors`` in insertion order; float arrays are stored as ``dtype``."""
    if dtype not in _DTYPES:
        raise InvalidArgument(f"unsupported dtype {dtype!r}")
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = "<i8" if np.issubdtype(arr.dtype, np.integer) else dtype
        data = np.ascontiguousarray(arr, dtype=np.dtype(dt)).tobytes()
        entries.append(
            {"name": name, "dtype": dt, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)}
        )
        blobs.append(data)
        offset += len(data)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "meta": dict(meta or {}),
        "tensors": entries,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    pad = (-(len(MAGIC) + 8 + len(raw))) % 8
    raw += b" " * pad
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise InvalidArgument(f"{path}: not a tensor container")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise InvalidArgument(f"{path}: unsupported format version {header.get('format_version')}")
    header["_payload_start"] = len(MAGIC) + 8 + hlen
    return header


def read_container(path: str | Path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(header, tensors)``; floats come back as float64 arrays."""
    header = read_header(path)
    if kind is not None and header["kind"] != kind:
        raise InvalidArgument(f"{path}: expected a {kind!r} container, found {header['kind']!r}")
    start = header.pop("_payload_start")
    with open(path, "rb") as fh:
        fh.seek(start)
        payload = fh.read()
    tensors = {}
    for entry in header["tensors"]:
        if entry["dtype"] not in _DTYPES:
            raise InvalidArgument(f"{path}: bad dtype in entry {entry['name']}")
        chunk = payload[entry["offset"]: entry["offset"] + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise InvalidArgument(f"{path}: truncated payload for {entry['name']}")
        arr = np.frombuffer(chunk, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(np.int64 if entry["dtype"] == "<i8" else np.float64)
    return header, tensors
