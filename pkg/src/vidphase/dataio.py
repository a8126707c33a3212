"""Readers and writers for the on-disk artifacts exchanged between stages.

Formats
-------
* frames: binary PGM (``P5``) / PPM (``P6``) with maxval 255
* flow: Middlebury ``.flo`` (float32 magic 202021.25, int32 width/height,
  interleaved float32 ``(u, v)``), little-endian
* tensors: ``PTNS`` container (ASCII magic, u32 rank, u32 dims, float32 data),
  little-endian
* signals: CSV with an ``index,value`` header

Frames are ``uint8`` arrays of shape ``(H, W)`` or ``(H, W, 3)``; flow fields
are ``float32`` arrays of shape ``(H, W, 2)`` holding ``(u, v)``.
"""

from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FLO_MAGIC = 202021.25
PTNS_MAGIC = b"PTNS"
MIN_FRAME_SIDE = 8


class FormatError(ValueError):
    """Base class for malformed artifact files."""


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class MaxvalError(FormatError):
    pass


class DimensionError(FormatError):
    pass


class SizeMismatchError(FormatError):
    pass


class MonotonicityError(FormatError):
    pass


class ParseError(FormatError):
    pass


# ----------------------------------------------------------------------------
# frames


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise TruncatedError("unexpected end of header")
    return buf[start:pos], pos


def decode_frame(buf: bytes) -> np.ndarray:
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise BadMagicError(f"unsupported magic {magic!r}; expected P5 or P6")
    channels = 1 if magic == b"P5" else 3
    pos = 2
    try:
        tokens = []
        for _ in range(3):
            tok, pos = _read_token(buf, pos)
            tokens.append(int(tok))
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise ParseError(f"non-integer header field: {exc}") from None
    width, height, maxval = tokens
    if maxval != 255:
        raise MaxvalError(f"maxval {maxval} is not 255")
    if width < MIN_FRAME_SIDE or height < MIN_FRAME_SIDE:
        raise DimensionError(f"frame {width}x{height} smaller than {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    size = width * height * channels
    payload = buf[pos : pos + size]
    if len(payload) < size:
        raise TruncatedError(f"payload has {len(payload)} bytes, expected {size}")
    data = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return data.reshape(shape).copy()


def encode_frame(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise TypeError(f"frames must be uint8, got {img.dtype}")
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise DimensionError(f"unsupported frame shape {img.shape}")
    height, width = img.shape[:2]
    if width < MIN_FRAME_SIDE or height < MIN_FRAME_SIDE:
        raise DimensionError(f"frame {width}x{height} smaller than {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}")
    header = magic + f"\n{width} {height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(img).tobytes()


def load_frame(path) -> np.ndarray:
    """Read a binary PGM/PPM file into a ``uint8`` array."""
    return decode_frame(Path(path).read_bytes())


def store_frame(img: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_frame(img))


def frame_paths(directory) -> list[Path]:
    """Numbered frame files ``frame_%06d.pgm|ppm`` in index order."""
    directory = Path(directory)
    paths = sorted(
        p for p in directory.iterdir() if p.name.startswith("frame_") and p.suffix in (".pgm", ".ppm")
    )
    for i, p in enumerate(paths):
        if p.stem != f"frame_{i:06d}":
            raise FormatError(f"frame sequence in {directory} is not contiguous at {p.name}")
    return paths


def load_frames(directory) -> np.ndarray:
    """Stack every frame of a directory into one ``(T, H, W[, 3])`` array."""
    paths = frame_paths(directory)
    if not paths:
        raise FormatError(f"no frames found in {directory}")
    frames = [load_frame(p) for p in paths]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise DimensionError(f"inconsistent frame shapes in {directory}: {sorted(shapes)}")
    return np.stack(frames)


# ----------------------------------------------------------------------------
# flow


def encode_flow(flow: np.ndarray) -> bytes:
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise DimensionError(f"flow must have shape (H, W, 2), got {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow contains non-finite values")
    height, width = flow.shape[:2]
    if width <= 0 or height <= 0:
        raise DimensionError("flow dimensions must be positive")
    header = struct.pack("<fii", FLO_MAGIC, width, height)
    return header + np.ascontiguousarray(flow, dtype="<f4").tobytes()


def decode_flow(buf: bytes) -> np.ndarray:
    if len(buf) < 12:
        raise TruncatedError("flow header truncated")
    magic, width, height = struct.unpack_from("<fii", buf, 0)
    if magic != FLO_MAGIC:
        raise BadMagicError(f"flow magic {magic} != {FLO_MAGIC}")
    if width <= 0 or height <= 0:
        raise DimensionError(f"non-positive flow dimensions {width}x{height}")
    count = width * height * 2
    if len(buf) - 12 < count * 4:
        raise TruncatedError(f"flow payload has {len(buf) - 12} bytes, expected {count * 4}")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=12)
    return data.reshape(height, width, 2).astype(np.float32)


def load_flow(path) -> np.ndarray:
    """Read a Middlebury ``.flo`` file into a ``float32`` ``(H, W, 2)`` array."""
    return decode_flow(Path(path).read_bytes())


def store_flow(flow: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_flow(flow))


# ----------------------------------------------------------------------------
# tensors


def encode_tensor(t: np.ndarray) -> bytes:
    t = np.asarray(t)
    if not 1 <= t.ndim <= 4:
        raise DimensionError(f"tensor rank must be in [1, 4], got {t.ndim}")
    header = PTNS_MAGIC + struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape)
    return header + np.ascontiguousarray(t, dtype="<f4").tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if buf[:4] != PTNS_MAGIC:
        raise BadMagicError(f"tensor magic {buf[:4]!r} != {PTNS_MAGIC!r}")
    if len(buf) < 8:
        raise TruncatedError("tensor header truncated")
    (rank,) = struct.unpack_from("<I", buf, 4)
    if not 1 <= rank <= 4:
        raise DimensionError(f"tensor rank must be in [1, 4], got {rank}")
    offset = 8 + 4 * rank
    if len(buf) < offset:
        raise TruncatedError("tensor dims truncated")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    expected = int(np.prod(dims, dtype=np.int64)) * 4
    if len(buf) - offset != expected:
        raise SizeMismatchError(
            f"dims {dims} need {expected} payload bytes, file has {len(buf) - offset}"
        )
    data = np.frombuffer(buf, dtype="<f4", offset=offset)
    return data.reshape(dims).astype(np.float32)


def load_tensor(path) -> np.ndarray:
    """Read a ``PTNS`` tensor file into a ``float32`` array."""
    return decode_tensor(Path(path).read_bytes())


def store_tensor(t: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_tensor(t))


# ----------------------------------------------------------------------------
# signals


@dataclass
class SignalSeries:
    """Indexed scalar series, e.g. the per-pair motion direction measure."""

    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float64))

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.indices.shape != self.values.shape:
            raise ValueError("indices and values must have equal lengths")
        if np.any(np.diff(self.indices) <= 0):
            raise MonotonicityError("signal indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def from_values(cls, values) -> "SignalSeries":
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        return cls(np.arange(len(values)), values)


def encode_signal(s: SignalSeries) -> str:
    out = io.StringIO()
    out.write("index,value\n")
    for i, v in zip(s.indices.tolist(), s.values.tolist()):
        out.write(f"{i},{v!r}\n")
    return out.getvalue()


def decode_signal(text: str) -> SignalSeries:
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r]
    if not rows or [c.strip() for c in rows[0]] != ["index", "value"]:
        raise ParseError("signal CSV must start with header 'index,value'")
    indices, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise ParseError(f"line {lineno}: expected 2 cells, got {len(row)}")
        try:
            indices.append(int(row[0]))
            values.append(float(row[1]))
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric cell in {row}") from None
    return SignalSeries(np.array(indices, dtype=np.int64), np.array(values, dtype=np.float64))


def load_signal(path) -> SignalSeries:
    with open(path, encoding="utf-8", newline="") as fh:
        return decode_signal(fh.read())


def store_signal(s: SignalSeries, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(encode_signal(s))


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary sibling and rename, so readers never see partial files."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
