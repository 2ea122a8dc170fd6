"""Shared binary container used by the grid/block file family.

Every block-style file (snapshot blocks, subdomain files, consolidated
time steps, remapped blocks) starts with the same 64-byte little-endian
header:

    magic       4 bytes ASCII ("SNPB", "SUBD", "CONS", "RMAP")
    version     u32, currently 1
    dtype       u8, 0 = f64, 1 = f32
    block_id    u32 (subdomain id for "SUBD", 0 where meaningless)
    row_count   u64
    n_cols      u64
    row_offset  u64 (time step for "SUBD"/"CONS")
    y_lo, y_hi  2 x f64
    padding     zeros up to byte 64; a format may claim the leading
                pad bytes for extras ("RMAP" stores n_steps, n_vars
                there as 2 x u32)

The payload is row_count x n_cols values, row-major, little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

HEADER_SIZE = 64
VERSION = 1

_FIXED = struct.Struct("<4sIBIQQQdd")
_RMAP_EXTRA = struct.Struct("<II")

_DTYPES = {"f64": np.dtype("<f8"), "f32": np.dtype("<f4")}
_CODES = {"f64": 0, "f32": 1}
_NAMES = {0: "f64", 1: "f32"}


def numpy_dtype(name):
    """Map the public dtype name ("f64" or "f32") to a numpy dtype."""
    try:
        return _DTYPES[name]
    except KeyError:
        raise ValidationError(f"unknown dtype {name!r}, expected 'f64' or 'f32'")


@dataclass(frozen=True)
class BlockHeader:
    magic: str
    dtype: str
    block_id: int
    row_count: int
    n_cols: int
    row_offset: int = 0
    y_lo: float = 0.0
    y_hi: float = 0.0
    n_steps: int = 0   # RMAP only
    n_vars: int = 0    # RMAP only

    @property
    def np_dtype(self):
        return numpy_dtype(self.dtype)

    @property
    def payload_bytes(self):
        return self.row_count * self.n_cols * self.np_dtype.itemsize

    def pack(self):
        raw = _FIXED.pack(
            self.magic.encode("ascii"),
            VERSION,
            _CODES[self.dtype],
            self.block_id,
            self.row_count,
            self.n_cols,
            self.row_offset,
            self.y_lo,
            self.y_hi,
        )
        if self.magic == "RMAP":
            raw += _RMAP_EXTRA.pack(self.n_steps, self.n_vars)
        return raw.ljust(HEADER_SIZE, b"\0")


def read_header(path, expect_magic=None):
    """Read and validate the 64-byte header of a block-style file."""
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    magic, version, code, block_id, rows, cols, offset, y_lo, y_hi = _FIXED.unpack(
        raw[: _FIXED.size]
    )
    try:
        magic = magic.decode("ascii")
    except UnicodeDecodeError:
        raise FormatError(f"{path}: unreadable magic bytes {raw[:4]!r}")
    if expect_magic is not None and magic != expect_magic:
        raise FormatError(f"{path}: magic {magic!r}, expected {expect_magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if code not in _NAMES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    hdr = BlockHeader(magic, _NAMES[code], block_id, rows, cols, offset, y_lo, y_hi)
    if magic == "RMAP":
        n_steps, n_vars = _RMAP_EXTRA.unpack_from(raw, _FIXED.size)
        hdr = replace(hdr, n_steps=n_steps, n_vars=n_vars)
    return hdr


def check_payload_size(path, header):
    """Raise FormatError if the file size does not match the header."""
    actual = Path(path).stat().st_size
    expected = HEADER_SIZE + header.payload_bytes
    if actual != expected:
        raise FormatError(
            f"{path}: truncated or oversized payload for block {header.block_id} "
            f"({actual} bytes on disk, header implies {expected})"
        )


def create_file(path, header):
    """Write a header plus a zero-filled payload."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(header.pack())
        f.truncate(HEADER_SIZE + header.payload_bytes)


def write_file(path, header, data):
    """Write a header plus a full payload in one shot."""
    data = np.ascontiguousarray(data, dtype=header.np_dtype)
    if data.shape != (header.row_count, header.n_cols):
        raise ValidationError(
            f"payload shape {data.shape} does not match header "
            f"({header.row_count}, {header.n_cols})"
        )
    with open(Path(path), "wb") as f:
        f.write(header.pack())
        data.tofile(f)


def open_payload(path, mode="r", expect_magic=None, header=None):
    """Memory-map the payload of a block-style file.

    Returns (header, memmap). The memmap has shape (row_count, n_cols).
    """
    if header is None:
        header = read_header(path, expect_magic)
    check_payload_size(path, header)
    mm = np.memmap(
        path,
        dtype=header.np_dtype,
        mode=mode,
        offset=HEADER_SIZE,
        shape=(header.row_count, header.n_cols),
    )
    return header, mm


def read_file(path, expect_magic=None):
    """Read header and full payload as an in-memory array."""
    header, mm = open_payload(path, "r", expect_magic)
    return header, np.array(mm)
