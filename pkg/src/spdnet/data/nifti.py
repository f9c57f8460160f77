"""Minimal NIfTI-1 volume reader/writer.

Covers exactly what the cardiac challenge distribution needs: single-file
``.nii`` / ``.nii.gz`` volumes, scalar dtypes, pixdim spacing, optional
scl_slope/scl_inter rescaling. Data is returned in Fortran order as stored,
i.e. ``array[i, j, k]`` follows the header's dim order.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

HEADER_SIZE = 348

_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def _open(path: Path, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def read_nifti(path: str | Path) -> tuple[np.ndarray, tuple[float, ...]]:
    """Read a NIfTI-1 file; returns (data, pixdim per data axis)."""
    path = Path(path)
    with _open(path, "rb") as f:
        raw = f.read()
    if len(raw) < HEADER_SIZE:
        raise ValueError(f"{path}: truncated NIfTI header")
    endian = "<"
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        endian = ">"
        (sizeof_hdr,) = struct.unpack_from(">i", raw, 0)
        if sizeof_hdr != HEADER_SIZE:
            raise ValueError(f"{path}: not a NIfTI-1 file")
    magic = raw[344:348]
    if magic[:3] not in (b"n+1", b"ni1"):
        raise ValueError(f"{path}: bad NIfTI magic {magic!r}")
    dim = struct.unpack_from(endian + "8h", raw, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise ValueError(f"{path}: invalid ndim {ndim}")
    shape = tuple(int(d) for d in dim[1 : 1 + ndim])
    (datatype,) = struct.unpack_from(endian + "h", raw, 70)
    if datatype not in _DTYPES:
        raise ValueError(f"{path}: unsupported NIfTI datatype code {datatype}")
    pixdim = struct.unpack_from(endian + "8f", raw, 76)
    (vox_offset,) = struct.unpack_from(endian + "f", raw, 108)
    slope, inter = struct.unpack_from(endian + "2f", raw, 112)

    dtype = np.dtype(_DTYPES[datatype]).newbyteorder(endian)
    count = int(np.prod(shape))
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=int(vox_offset))
    data = data.reshape(shape, order="F").astype(np.dtype(_DTYPES[datatype]))
    if slope != 0.0 and (slope != 1.0 or inter != 0.0):
        data = data.astype(np.float32) * slope + inter
    spacing = tuple(float(abs(p)) for p in pixdim[1 : 1 + ndim])
    return data, spacing


def write_nifti(path: str | Path, data: np.ndarray, spacing: tuple[float, ...] | None = None) -> Path:
    """Write a NIfTI-1 file (gzip-compressed when the name ends in .gz)."""
    path = Path(path)
    data = np.asarray(data)
    if data.dtype not in _CODES:
        data = data.astype(np.float32)
    code = _CODES[data.dtype]
    ndim = data.ndim
    if not 1 <= ndim <= 7:
        raise ValueError(f"cannot write {ndim}-D volume")
    if spacing is None:
        spacing = (1.0,) * ndim
    if len(spacing) != ndim:
        raise ValueError("spacing length must match data ndim")

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    dim = [ndim] + list(data.shape) + [1] * (7 - ndim)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, data.dtype.itemsize * 8)  # bitpix
    pixdim = [1.0] + [float(s) for s in spacing] + [1.0] * (7 - ndim)
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, 352.0)  # vox_offset
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    hdr[344:348] = b"n+1\x00"

    payload = bytes(hdr) + b"\x00" * 4 + np.asfortranarray(data).tobytes(order="F")
    with _open(path, "wb") as f:
        f.write(payload)
    return path
