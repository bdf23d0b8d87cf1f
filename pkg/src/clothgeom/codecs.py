"""File formats for depth, height and mask grids.

* PFM: single-channel 32-bit float heights in metres.  A negative scale
  marks little-endian data; rows are stored bottom-to-top.  NaN = invalid.
* PGM (P5, 16-bit big-endian): sensor depth in millimetres, 0 = no reading.
* CSV: row-major heights in metres; ``nan`` or an empty cell = invalid.
* Mask PGM (P5, 8 or 16 bit): non-zero = garment.
"""
from __future__ import annotations

import io
import re
from pathlib import Path

import numpy as np

from .grid import Calibration, DepthMap, HeightField, PixelMask, depth_to_height


class FormatError(ValueError):
    """Unreadable, unsupported or malformed file."""


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc


def _write_bytes(path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc.strerror}") from exc


# ---------------------------------------------------------------- PFM

def encode_pfm(values: np.ndarray) -> bytes:
    a = np.asarray(values, dtype="<f4")
    if a.ndim != 2:
        raise FormatError("PFM encoder expects a 2D array")
    h, w = a.shape
    return f"Pf\n{w} {h}\n-1.0\n".encode("ascii") + np.flipud(a).tobytes()


def decode_pfm(data: bytes) -> np.ndarray:
    """Return a float32 array (top row first)."""
    fields, pos = [], 0
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise FormatError("truncated PFM header")
        fields.append(m.group(1))
        pos = m.end()
    magic, w, h, scale = fields
    if magic == b"PF":
        raise FormatError("colour PFM is not supported; expected single-channel 'Pf'")
    if magic != b"Pf":
        raise FormatError("not a PFM file")
    try:
        w, h, scale = int(w), int(h), float(scale)
    except ValueError as exc:
        raise FormatError("malformed PFM header") from exc
    if w <= 0 or h <= 0 or scale == 0:
        raise FormatError("PFM header has non-positive size or zero scale")
    pos += 1  # single whitespace byte ends the header
    dtype = "<f4" if scale < 0 else ">f4"
    body = data[pos:]
    if len(body) < 4 * w * h:
        raise FormatError(f"PFM body too short: {len(body)} bytes for {w}x{h}")
    a = np.frombuffer(body, dtype=dtype, count=w * h).reshape(h, w)
    return np.flipud(a).astype(np.float32)


def write_pfm(path, h: HeightField) -> None:
    _write_bytes(path, encode_pfm(np.where(h.valid, h.values, np.nan)))


def read_pfm(path, pitch: float) -> HeightField:
    return HeightField(decode_pfm(_read_bytes(path)).astype(float), pitch)


# ---------------------------------------------------------------- PGM

def encode_pgm(values: np.ndarray, maxval: int) -> bytes:
    a = np.asarray(values)
    if a.ndim != 2:
        raise FormatError("PGM encoder expects a 2D array")
    if not 0 < maxval < 65536:
        raise FormatError(f"PGM maxval must be in 1..65535, got {maxval}")
    if a.size and (a.min() < 0 or a.max() > maxval):
        raise FormatError("PGM samples out of range")
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = a.shape
    return f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + a.astype(dtype).tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    fields, pos = [], 0
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise FormatError("truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = fields
    if magic != b"P5":
        raise FormatError("not a binary PGM (P5) file")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError("malformed PGM header") from exc
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise FormatError("PGM header out of range")
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h * np.dtype(dtype).itemsize
    if len(data) - pos < n:
        raise FormatError(f"PGM body too short for {w}x{h}")
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(np.int64)


def read_depth_pgm(path, calib: Calibration) -> HeightField:
    """16-bit depth in millimetres to a height field; zero samples are invalid."""
    raw = decode_pgm(_read_bytes(path))
    depth = DepthMap(raw / 1000.0, raw > 0)
    return depth_to_height(depth, calib)


def write_depth_pgm(path, h: HeightField, calib: Calibration) -> None:
    depth_mm = np.rint((calib.depth_offset - h.values) * 1000.0)
    if np.any(h.valid & ((depth_mm < 1) | (depth_mm > 65535))):
        raise FormatError("depth outside the 1..65535 mm range of 16-bit PGM")
    _write_bytes(path, encode_pgm(np.where(h.valid, depth_mm, 0).astype(np.int64), 65535))


def read_mask(path) -> PixelMask:
    return PixelMask(decode_pgm(_read_bytes(path)) > 0)


def write_mask(path, m: PixelMask) -> None:
    _write_bytes(path, encode_pgm(m.bits.astype(np.uint8) * 255, 255))


# ---------------------------------------------------------------- CSV

def read_csv(path, pitch: float) -> HeightField:
    text = _read_bytes(path).decode("utf-8", errors="replace")
    rows = [line.split(",") for line in text.splitlines() if line.strip()]
    if not rows:
        raise FormatError(f"{path} holds no data")
    if len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path} has ragged rows")
    try:
        values = np.array([[float(c) if c.strip() else np.nan for c in r] for r in rows])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return HeightField(values, pitch)


def write_csv(path, h: HeightField) -> None:
    buf = io.StringIO()
    for row, ok in zip(h.values, h.valid):
        buf.write(",".join(repr(float(v)) if o else "nan" for v, o in zip(row, ok)) + "\n")
    _write_bytes(path, buf.getvalue().encode("utf-8"))


# ---------------------------------------------------------------- dispatch

def read_height(path, calib: Calibration) -> HeightField:
    """Load a height field, choosing the codec by file extension."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return read_pfm(path, calib.pitch)
    if suffix == ".pgm":
        return read_depth_pgm(path, calib)
    if suffix == ".csv":
        return read_csv(path, calib.pitch)
    raise FormatError(f"unsupported input format {suffix or '(none)'!r}; use .pfm, .pgm or .csv")
