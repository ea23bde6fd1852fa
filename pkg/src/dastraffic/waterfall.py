"""Spatio-temporal DAS array (bins x shots), its DASW file format and PGM export.

DASW layout, little-endian::

    "DASW" | version u16 | B u32 | M u32 | bin_pitch_m f64 | shot_period_s f64
    | B*M f32 payload, row-major by bin | crc32(payload) u32 | "WSAD"
"""
from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass

import numpy as np

MAGIC = b"DASW"
TRAILER_MAGIC = b"WSAD"
VERSION = 1
_HEADER = struct.Struct("<4sHIIdd")  # 30 bytes
_TRAILER = struct.Struct("<I4s")  # 8 bytes

BIN_PITCH_M = 0.68
SHOT_PERIOD_S = 1 / 1000.04


class WaterfallFormatError(ValueError):
    """Raised for malformed DASW files."""


class BadMagicError(WaterfallFormatError):
    pass


class TruncatedError(WaterfallFormatError):
    pass


class ChecksumError(WaterfallFormatError):
    pass


class NonFiniteError(WaterfallFormatError):
    pass


@dataclass(frozen=True, eq=False)
class Waterfall:
    """Phase displacement in radians, one row per fibre bin.

    ``values`` is stored read-only as float32 of shape ``(bins, shots)``.
    """

    values: np.ndarray
    bin_pitch_m: float = BIN_PITCH_M
    shot_period_s: float = SHOT_PERIOD_S

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float32, order="C", copy=True)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"waterfall must be a non-empty 2-D array, got shape {v.shape}")
        if not (self.bin_pitch_m > 0 and self.shot_period_s > 0):
            raise ValueError("bin_pitch_m and shot_period_s must be positive")
        if not np.isfinite(v).all():
            raise ValueError("waterfall contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def bins(self):
        return self.values.shape[0]

    @property
    def shots(self):
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Waterfall):
            return NotImplemented
        return (
            self.bin_pitch_m == other.bin_pitch_m
            and self.shot_period_s == other.shot_period_s
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )


def to_bytes(w):
    payload = w.values.astype("<f4", copy=False).tobytes()
    header = _HEADER.pack(MAGIC, VERSION, w.bins, w.shots, w.bin_pitch_m, w.shot_period_s)
    return header + payload + _TRAILER.pack(zlib.crc32(payload), TRAILER_MAGIC)


def atomic_write(path, data):
    """Write ``data`` to ``path`` via a temporary file in the same directory."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        if isinstance(exc, OSError):
            raise OSError(f"cannot write {path}: {exc}") from exc
        raise


def save_waterfall(w, path):
    atomic_write(path, to_bytes(w))


def from_bytes(data, source="<bytes>"):
    if len(data) < _HEADER.size:
        raise TruncatedError(f"{source}: truncated header ({len(data)} bytes)")
    magic, version, b, m, pitch, period = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise WaterfallFormatError(f"{source}: unsupported version {version}")
    n = b * m * 4
    end = _HEADER.size + n
    if len(data) < end + _TRAILER.size:
        raise TruncatedError(
            f"{source}: truncated payload, header declares {b}x{m} values "
            f"but only {max(0, len(data) - _HEADER.size)} bytes follow"
        )
    payload = data[_HEADER.size:end]
    crc, tail = _TRAILER.unpack_from(data, end)
    if tail != TRAILER_MAGIC:
        raise BadMagicError(f"{source}: bad trailer magic {tail!r}")
    if crc != zlib.crc32(payload):
        raise ChecksumError(f"{source}: payload CRC mismatch")
    values = np.frombuffer(payload, dtype="<f4").reshape(b, m)
    if not np.isfinite(values).all():
        bad = np.argwhere(~np.isfinite(values))[0]
        raise NonFiniteError(f"{source}: non-finite value at bin {bad[0]}, shot {bad[1]}")
    return Waterfall(values, pitch, period)


def load_waterfall(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return from_bytes(data, source=os.fspath(path))


def render_pgm(w, lo, hi):
    """Binary P5 greyscale image: one row per bin, one column per shot."""
    if not lo < hi:
        raise ValueError(f"render range needs lo < hi, got {lo}..{hi}")
    v = w.values.astype(np.float64)
    scaled = np.clip((v - lo) / (hi - lo), 0.0, 1.0) * 255.0
    # round half away from zero (values are non-negative here)
    pixels = np.floor(scaled + 0.5).astype(np.uint8)
    header = f"P5\n{w.shots} {w.bins}\n255\n".encode("ascii")
    return header + pixels.tobytes()
