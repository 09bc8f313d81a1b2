"""Minimal MRC2014 reader and writer (little-endian, modes 0, 1, 2, 6)."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

HEADER_BYTES = 1024
MAGIC = b"MAP "

MODE_DTYPES = {
    0: np.dtype("<i1"),
    1: np.dtype("<i2"),
    2: np.dtype("<f4"),
    6: np.dtype("<u2"),
}


class MrcError(ValueError):
    """Base class for MRC parse failures."""


class MrcHeaderError(MrcError):
    """Header is missing, has the wrong magic or impossible dimensions."""


class MrcModeError(MrcError):
    """Data mode is not one of the supported modes."""


class MrcTruncatedError(MrcError):
    """File ends before the declared data does."""


@dataclass(frozen=True)
class MrcHeader:
    nx: int
    ny: int
    nz: int
    mode: int
    nsymbt: int
    pixel_size: float | None  # angstrom, from the cell dimensions when present

    @property
    def data_offset(self):
        return HEADER_BYTES + self.nsymbt


def parse_header(raw):
    """Decode the fields needed for reading from a 1024-byte header."""
    if len(raw) < HEADER_BYTES:
        raise MrcHeaderError(f"header is {len(raw)} bytes, expected {HEADER_BYTES}")
    words = np.frombuffer(raw[:HEADER_BYTES], dtype="<i4")
    floats = np.frombuffer(raw[:HEADER_BYTES], dtype="<f4")
    if raw[208:212] != MAGIC:
        raise MrcHeaderError(f"bad magic {bytes(raw[208:212])!r}, expected {MAGIC!r}")
    nx, ny, nz, mode = (int(v) for v in words[:4])
    if nx <= 0 or ny <= 0 or nz <= 0:
        raise MrcHeaderError(f"bad dimensions nx={nx} ny={ny} nz={nz}")
    nsymbt = int(words[23])
    if nsymbt < 0:
        raise MrcHeaderError(f"negative extended header size {nsymbt}")
    mx = int(words[7])
    xlen = float(floats[10])
    pixel = xlen / mx if mx > 0 and xlen > 0 else None
    return MrcHeader(nx=nx, ny=ny, nz=nz, mode=mode, nsymbt=nsymbt, pixel_size=pixel)


def read_mrc(path):
    """Read an MRC file as float64.

    Returns a ``(ny, nx)`` array when NZ = 1 and a ``(nz, ny, nx)`` stack
    otherwise, along with the parsed header.
    """
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_BYTES)
        header = parse_header(raw)
        if header.mode not in MODE_DTYPES:
            raise MrcModeError(f"unsupported MRC mode {header.mode}")
        dtype = MODE_DTYPES[header.mode]
        fh.seek(header.data_offset)
        count = header.nx * header.ny * header.nz
        data = np.fromfile(fh, dtype=dtype, count=count)
    if data.size < count:
        raise MrcTruncatedError(f"expected {count} values, found {data.size}")
    data = data.astype(np.float64).reshape(header.nz, header.ny, header.nx)
    if header.nz == 1:
        data = data[0]
    return data, header


def write_mrc(path, data, pixel_size=1.0, mode=2, extended=b""):
    """Write a 2D image or 3D stack as an MRC2014 file."""
    if mode not in MODE_DTYPES:
        raise MrcModeError(f"unsupported MRC mode {mode}")
    arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError("data must be 2D or 3D")
    nz, ny, nx = arr.shape
    out = arr.astype(MODE_DTYPES[mode])
    words = np.zeros(256, dtype="<i4")
    words[:4] = (nx, ny, nz, mode)
    words[7:10] = (nx, ny, nz)
    words[16:19] = (1, 2, 3)
    words[23] = len(extended)
    words[27] = 20140  # NVERSION
    floats = words.view("<f4")
    floats[10:13] = (nx * pixel_size, ny * pixel_size, nz * pixel_size)
    floats[13:16] = 90.0
    if out.size:
        floats[19] = float(out.min())
        floats[20] = float(out.max())
        floats[21] = float(out.astype(np.float64).mean())
    header = bytearray(words.tobytes())
    header[208:212] = MAGIC
    header[212:216] = b"\x44\x44\x00\x00"  # little-endian machine stamp
    tmp = f"{os.fspath(path)}.part"
    with open(tmp, "wb") as fh:
        fh.write(bytes(header))
        fh.write(extended)
        fh.write(out.tobytes(order="C"))
    os.replace(tmp, path)
