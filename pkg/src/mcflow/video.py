"""Video container plus on-disk formats.

Binary video layout (little-endian):

    magic "MCVD" | u32 T | u32 C | u32 H | u32 W | f64 pixel data

Pixels live in [0,1].  PGM dumps are binary P5, maxval 255, single channel.
Malformed files raise VideoFormatError naming the byte offset.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

VIDEO_MAGIC = b"MCVD"
MAX_ELEMENTS = 1 << 31  # refuse headers that would allocate > 16 GiB


class VideoFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Video:
    """Frames as a (T, C, H, W) float64 array with pixel values in [0,1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4:
            raise ValueError(f"video data must be (T, C, H, W), got shape {arr.shape}")
        if any(n < 1 for n in arr.shape):
            raise ValueError(f"video dims must be >= 1, got {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]


def save_video(path, video: Video):
    arr = np.ascontiguousarray(video.data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("video contains non-finite pixels")
    with open(path, "wb") as f:
        f.write(VIDEO_MAGIC)
        f.write(struct.pack("<4I", *arr.shape))
        f.write(arr.astype("<f8", copy=False).tobytes())


def load_video(path) -> Video:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 4 or buf[:4] != VIDEO_MAGIC:
        raise VideoFormatError(f"bad magic {buf[:4]!r} at byte 0 (want {VIDEO_MAGIC!r})")
    if len(buf) < 20:
        raise VideoFormatError(f"truncated header: file ends at byte {len(buf)}, need 20")
    dims = struct.unpack("<4I", buf[4:20])
    size = 1
    for i, d in enumerate(dims):
        if d == 0:
            raise VideoFormatError(f"zero dimension at byte {4 + 4 * i}")
        size *= d
    if size > MAX_ELEMENTS:
        raise VideoFormatError(f"dim overflow at byte 4: {dims} implies {size} elements > {MAX_ELEMENTS}")
    need = 20 + 8 * size
    if len(buf) < need:
        raise VideoFormatError(f"truncated payload at byte {len(buf)}: want {need} bytes for {dims}")
    if len(buf) > need:
        raise VideoFormatError(f"{len(buf) - need} trailing bytes at byte {need}")
    data = np.frombuffer(buf[20:need], dtype="<f8").reshape(dims).copy()
    return Video(data)


# -- PGM -------------------------------------------------------------------------


def save_pgm(path, frame: np.ndarray):
    """Write one grayscale frame ((H, W) or (1, H, W), values in [0,1]) as P5."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise ValueError(f"PGM frames are single channel, got {arr.shape}")
        arr = arr[0]
    if arr.ndim != 2:
        raise ValueError(f"PGM frame must be (H, W), got shape {arr.shape}")
    h, w = arr.shape
    u8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(u8.tobytes())


def load_pgm(path) -> np.ndarray:
    """Read a binary P5 file into a (1, H, W) float64 array in [0,1]."""
    with open(path, "rb") as f:
        buf = f.read()
    m = re.match(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s", buf)
    if m is None:
        raise VideoFormatError(f"not a binary PGM: {path}")
    w, h, maxval = (int(m.group(i)) for i in (1, 2, 3))
    if maxval != 255:
        raise VideoFormatError(f"unsupported PGM maxval {maxval} (want 255)")
    pixels = buf[m.end() :]
    if len(pixels) < h * w:
        raise VideoFormatError(f"truncated PGM payload: {len(pixels)} < {h * w}")
    arr = np.frombuffer(pixels[: h * w], dtype=np.uint8).reshape(h, w)
    return (arr[None].astype(np.float64)) / 255.0


def dump_frames_pgm(video: Video, out_dir, indices=None) -> list:
    """Dump selected frames (default: all) as frame_XXXXX.pgm; returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if indices is None:
        indices = range(video.frames)
    paths = []
    for i in indices:
        if not 0 <= i < video.frames:
            raise ValueError(f"frame index {i} outside [0, {video.frames})")
        p = out / f"frame_{i:05d}.pgm"
        save_pgm(p, video.data[i])
        paths.append(p)
    return paths
