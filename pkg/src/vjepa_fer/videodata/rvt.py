"""RVT1 raw video container.

Layout (little-endian): magic ``RVT1``, u32 T, H, W, C, then T*H*W*C bytes
of uint8 pixels in row-major, frame-major order.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vjepa_fer.autodiff.checkpoint import atomic_write_bytes
from vjepa_fer.errors import DimensionError, FormatError

MAGIC = b"RVT1"
HEADER = struct.Struct("<4sIIII")


@dataclass
class VideoTensor:
    frames: np.ndarray  # (T, H, W, 3) uint8
    frame_rate: float = 24.0

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or min(f.shape[:3]) < 1 or f.shape[3] != 3:
            raise DimensionError(f"video frames must be T×H×W×3 with T,H,W ≥ 1, got {f.shape}")
        if f.dtype != np.uint8:
            raise DimensionError(f"video frames must be uint8, got {f.dtype}")
        self.frames = np.ascontiguousarray(f)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


def encode_video(v: VideoTensor) -> bytes:
    t, h, w, c = v.frames.shape
    return HEADER.pack(MAGIC, t, h, w, c) + v.frames.tobytes()


def decode_video(buf: bytes) -> VideoTensor:
    if len(buf) < HEADER.size:
        raise FormatError(f"truncated RVT1 header: {len(buf)} of {HEADER.size} bytes", len(buf))
    magic, t, h, w, c = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if c != 3 or min(t, h, w) < 1:
        raise FormatError(f"unsupported RVT1 dims T={t} H={h} W={w} C={c}", 4)
    need = t * h * w * c
    have = len(buf) - HEADER.size
    if have < need:
        raise FormatError(f"truncated RVT1 payload: expected {need} bytes, got {have}", len(buf))
    if have > need:
        raise FormatError(f"{have - need} trailing bytes after RVT1 payload", HEADER.size + need)
    frames = np.frombuffer(buf, dtype=np.uint8, count=need, offset=HEADER.size).reshape(t, h, w, c)
    return VideoTensor(frames.copy())


def store_video(path: str | os.PathLike, v: VideoTensor) -> None:
    atomic_write_bytes(path, encode_video(v))


def load_video(path: str | os.PathLike) -> VideoTensor:
    return decode_video(Path(path).read_bytes())


def read_header(path: str | os.PathLike) -> tuple[int, int, int, int]:
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size)
    if len(head) < HEADER.size:
        raise FormatError("truncated RVT1 header", len(head))
    magic, t, h, w, c = HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    return t, h, w, c
