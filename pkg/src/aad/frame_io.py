"""Frame decoding, sequence loading and the binary flow cache.

PGM (P2 ASCII and P5 binary) is the only mandatory image format. Flow
fields are cached in a little-endian ``AADF`` container::

    offset  size  field
    0       4     magic  b"AADF"
    4       4     version (u32, currently 1)
    8       4     width   (u32)
    12      4     height  (u32)
    16      4     source frame index (u32)
    20      4     target frame index (u32)
    24      4     reserved (u32, always 0)
    28      4*w*h Vx plane, f32 row-major
    ...     4*w*h Vy plane, f32 row-major
"""
from __future__ import annotations

import io
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from .errors import FormatError, InsufficientDataError, LengthError, ShapeError
from .fields import FlowField, FrameBuffer

__all__ = [
    "FrameBuffer",
    "FlowCacheHeader",
    "decode_pgm",
    "encode_pgm",
    "encode_ppm",
    "read_pgm",
    "write_pgm",
    "to_grayscale",
    "natural_key",
    "sequence_paths",
    "iter_sequence",
    "load_sequence",
    "write_flow_cache",
    "read_flow_cache",
    "save_flow_cache",
    "load_flow_cache",
]

FLOW_MAGIC = b"AADF"
FLOW_VERSION = 1
_FLOW_HEADER = struct.Struct("<4s6I")

_WHITESPACE = b" \t\n\v\f\r"


# --------------------------------------------------------------------------
# PGM
# --------------------------------------------------------------------------


class _TokenReader:
    """Whitespace/comment-aware token scanner over a netpbm byte string."""

    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def _skip(self):
        data, n = self.data, len(self.data)
        while self.pos < n:
            ch = data[self.pos : self.pos + 1]
            if ch in _WHITESPACE and ch:
                self.pos += 1
            elif ch == b"#":
                end = data.find(b"\n", self.pos)
                self.pos = n if end < 0 else end + 1
            else:
                break

    def token(self) -> bytes | None:
        self._skip()
        start = self.pos
        data, n = self.data, len(self.data)
        while self.pos < n and data[self.pos : self.pos + 1] not in _WHITESPACE + b"#":
            self.pos += 1
        return data[start : self.pos] if self.pos > start else None

    def integer(self, what: str) -> int:
        tok = self.token()
        if tok is None:
            raise FormatError(f"missing {what} in header")
        if not tok.isdigit():
            raise FormatError(f"invalid {what} {tok[:16]!r}")
        return int(tok)


def decode_pgm(data: bytes, index: int = 0) -> FrameBuffer:
    """Decode a P2 or P5 netpbm graymap into a frame scaled to [0, 255].

    Samples are scaled as ``s * 255 / maxval``; for ``maxval == 255`` the
    values are copied unchanged. 16-bit P5 samples are big-endian, as the
    netpbm format prescribes.

    Raises:
        FormatError: bad magic, header token, dimension or sample value.
        LengthError: the pixel payload is shorter than the header implies.
    """
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise FormatError("expected a byte string")
    data = bytes(data)
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"not a PGM file (magic {magic!r})")
    reader = _TokenReader(data, 2)
    # The magic must be followed by whitespace or a comment.
    if len(data) > 2 and data[2:3] not in _WHITESPACE + b"#":
        raise FormatError("missing whitespace after magic")
    width = reader.integer("width")
    height = reader.integer("height")
    maxval = reader.integer("maxval")
    if width < 1 or height < 1:
        raise FormatError(f"dimension below minimum: {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise FormatError(f"maxval {maxval} outside 1..65535")
    count = width * height

    if magic == b"P5":
        if reader.pos >= len(data) or data[reader.pos : reader.pos + 1] not in _WHITESPACE:
            raise LengthError("missing pixel payload")
        start = reader.pos + 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        payload = data[start : start + need]
        if len(payload) < need:
            raise LengthError(f"payload has {len(payload)} bytes, expected {need}")
        samples = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    else:
        values = []
        for _ in range(count):
            tok = reader.token()
            if tok is None:
                raise LengthError(f"payload has {len(values)} samples, expected {count}")
            if not tok.isdigit():
                raise FormatError(f"invalid sample {tok[:16]!r}")
            values.append(int(tok))
        samples = np.asarray(values, dtype=np.float64)

    if samples.size and samples.max() > maxval:
        raise FormatError("sample exceeds maxval")
    if maxval != 255:
        samples = samples * 255.0 / maxval
    return FrameBuffer(samples.reshape(height, width), index)


def read_pgm(path, index: int = 0) -> FrameBuffer:
    return decode_pgm(Path(path).read_bytes(), index)


def encode_pgm(data: np.ndarray) -> bytes:
    """Encode a 2-D array of [0, 255] values as an 8-bit P5 graymap (rounded)."""
    arr = np.asarray(data.data if isinstance(data, FrameBuffer) else data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError("PGM data must be 2-D")
    pixels = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def write_pgm(path, data) -> None:
    Path(path).write_bytes(encode_pgm(data))


def encode_ppm(rgb: np.ndarray) -> bytes:
    """Encode an ``(h, w, 3)`` array of [0, 255] values as an 8-bit P6 pixmap."""
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError("PPM data must have shape (h, w, 3)")
    pixels = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    h, w, _ = pixels.shape
    return b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def to_grayscale(r, g, b, index: int = 0) -> FrameBuffer:
    """BT.601 luminance of three equally sized channels."""
    r, g, b = (np.asarray(c, dtype=np.float64) for c in (r, g, b))
    if not (r.shape == g.shape == b.shape):
        raise ShapeError(f"channel shapes differ: {r.shape}, {g.shape}, {b.shape}")
    if r.ndim == 0:
        r, g, b = (c.reshape(1, 1) for c in (r, g, b))
    return FrameBuffer(0.299 * r + 0.587 * g + 0.114 * b, index)


# --------------------------------------------------------------------------
# Sequences
# --------------------------------------------------------------------------


def natural_key(name: str):
    """Sort key ordering embedded digit runs numerically (f2 < f10)."""
    return [(0, int(part), "") if part.isdigit() else (1, 0, part) for part in re.split(r"(\d+)", name)]


def sequence_paths(directory, pattern: str = "*.pgm") -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"frame directory not found: {directory}")
    paths = [p for p in directory.glob(pattern) if p.is_file()]
    return sorted(paths, key=lambda p: natural_key(p.name))


def iter_sequence(directory, pattern: str = "*.pgm", min_frames: int = 3) -> Iterator[FrameBuffer]:
    """Lazily decode a directory of frames in natural filename order."""
    paths = sequence_paths(directory, pattern)
    if len(paths) < min_frames:
        raise InsufficientDataError(
            f"{directory}: found {len(paths)} frames matching {pattern!r}, need at least {min_frames}"
        )
    return _decode_paths(paths)


def _decode_paths(paths) -> Iterator[FrameBuffer]:
    shape = None
    for i, path in enumerate(paths):
        try:
            frame = read_pgm(path, i)
        except (FormatError, LengthError) as exc:
            raise type(exc)(f"{path}: {exc}") from exc
        if shape is None:
            shape = frame.shape
        elif frame.shape != shape:
            raise ShapeError(f"{path}: frame is {frame.width}x{frame.height}, sequence is {shape[1]}x{shape[0]}")
        yield frame


def load_sequence(directory, pattern: str = "*.pgm") -> list[FrameBuffer]:
    """Decode every matching frame, indexed 0..n-1 in natural filename order."""
    return list(iter_sequence(directory, pattern))


# --------------------------------------------------------------------------
# Flow cache
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowCacheHeader:
    width: int
    height: int
    frame_pair: tuple[int, int]
    version: int = FLOW_VERSION
    magic: bytes = FLOW_MAGIC


def write_flow_cache(flow: FlowField, header: FlowCacheHeader, sink: BinaryIO) -> int:
    """Serialize ``flow`` into ``sink``; returns the number of bytes written."""
    if (header.width, header.height) != (flow.width, flow.height):
        raise ShapeError(
            f"header says {header.width}x{header.height}, flow is {flow.width}x{flow.height}"
        )
    src, dst = header.frame_pair
    head = _FLOW_HEADER.pack(header.magic, header.version, header.width, header.height, src, dst, 0)
    body = flow.vx.astype("<f4").tobytes() + flow.vy.astype("<f4").tobytes()
    sink.write(head)
    sink.write(body)
    return len(head) + len(body)


def read_flow_cache(source) -> tuple[FlowField, FlowCacheHeader]:
    """Inverse of :func:`write_flow_cache`. Accepts bytes or a binary stream."""
    data = bytes(source) if isinstance(source, (bytes, bytearray, memoryview)) else source.read()
    if len(data) < _FLOW_HEADER.size:
        raise LengthError(f"flow cache header truncated ({len(data)} bytes)")
    magic, version, width, height, src, dst, reserved = _FLOW_HEADER.unpack_from(data)
    if magic != FLOW_MAGIC:
        raise FormatError(f"bad flow cache magic {magic!r}")
    if version != FLOW_VERSION:
        raise FormatError(f"unsupported flow cache version {version}")
    if reserved != 0:
        raise FormatError("reserved header field is not zero")
    plane = width * height
    need = _FLOW_HEADER.size + 8 * plane
    if len(data) != need:
        raise LengthError(f"flow cache has {len(data)} bytes, expected {need}")
    values = np.frombuffer(data, dtype="<f4", offset=_FLOW_HEADER.size)
    vx = values[:plane].reshape(height, width).astype(np.float32)
    vy = values[plane:].reshape(height, width).astype(np.float32)
    header = FlowCacheHeader(width, height, (src, dst), version, magic)
    return FlowField(vx, vy), header


def save_flow_cache(path, flow: FlowField, frame_pair: tuple[int, int]) -> int:
    buf = io.BytesIO()
    n = write_flow_cache(flow, FlowCacheHeader(flow.width, flow.height, tuple(frame_pair)), buf)
    Path(path).write_bytes(buf.getvalue())
    return n


def load_flow_cache(path) -> tuple[FlowField, FlowCacheHeader]:
    return read_flow_cache(Path(path).read_bytes())
