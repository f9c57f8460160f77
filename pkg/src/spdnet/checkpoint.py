"""Single-file checkpoint container with a versioned JSON header.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
(sorted keys), then the raw little-endian array payload. The header lists
arrays as {name, dtype, shape, offset, nbytes} with offsets relative to the
payload start, plus the run config and free-form meta. Arrays are written in
sorted name order, so save -> load -> save reproduces identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, CheckpointVersionError

MAGIC = b"SPDCKPT1"
FORMAT_VERSION = 1


@dataclass
class CheckpointData:
    arrays: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _little_endian(arr: np.ndarray) -> np.ndarray:
    # ascontiguousarray promotes 0-d arrays to 1-d; restore the true shape.
    arr = np.ascontiguousarray(arr).reshape(arr.shape)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return arr


def save_checkpoint(
    path: str | Path,
    arrays: dict[str, np.ndarray],
    config: dict | None = None,
    meta: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = _little_endian(np.asarray(arrays[name]))
        raw = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "config": config or {},
        "meta": meta or {},
        "arrays": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for raw in blobs:
            fh.write(raw)
    return path


def load_checkpoint(path: str | Path) -> CheckpointData:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<Q", blob[len(MAGIC) : len(MAGIC) + 8])
    header_end = len(MAGIC) + 8 + header_len
    if header_end > len(blob):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[len(MAGIC) + 8 : header_end].decode())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from e
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version!r}, expected {FORMAT_VERSION}"
        )
    payload = blob[header_end:]
    arrays = {}
    for entry in header["arrays"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload at array {entry['name']!r}")
        arr = np.frombuffer(payload[start : start + nbytes], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return CheckpointData(arrays=arrays, config=header["config"], meta=header["meta"])
