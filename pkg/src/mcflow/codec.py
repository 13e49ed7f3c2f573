"""Analytic multi-chunk causal codec.

A chunk of 4n+1 frames maps to n+1 latent frames: latent 0 is the 2x2
spatial average pool of frame 0, latent i (i >= 1) pools the temporal mean
of frames 4i-3..4i.  The codec is linear, causal within a chunk (latent i
depends only on frames <= 4i), and chunks encode independently.  Decoding
repeats each latent frame over its temporal group and nearest-upsamples
2x spatially.  Channels pass through untouched (d = C).

Latent file layout (little-endian):

    magic "MCLT" | u32 n_chunks | per chunk: u32 f,d,h,w + f64 data | u8 mask bytes
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .chunking import ChunkPlan, split_frames
from .video import Video

LATENT_MAGIC = b"MCLT"
SPATIAL_FACTOR = 2
TEMPORAL_GROUP = 4


class LatentFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LatentChunk:
    """Latent frames (f, d, h, w) for one chunk."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4:
            raise ValueError(f"latent chunk must be (f, d, h, w), got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def latent_frames(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class MultiChunkLatent:
    """Ordered chunk latents, their concatenation, and the keyframe mask."""

    chunks: tuple[LatentChunk, ...]
    keyframe_mask: np.ndarray
    data: np.ndarray = field(init=False)

    def __post_init__(self):
        if not self.chunks:
            raise ValueError("at least one latent chunk is required")
        base = self.chunks[0].data.shape[1:]
        for c in self.chunks:
            if c.data.shape[1:] != base:
                raise ValueError(f"chunk latent dims differ: {c.data.shape[1:]} != {base}")
        concat = np.concatenate([c.data for c in self.chunks], axis=0)
        mask = np.asarray(self.keyframe_mask, dtype=bool)
        if mask.shape != (concat.shape[0],):
            raise ValueError(f"mask shape {mask.shape} != ({concat.shape[0]},)")
        object.__setattr__(self, "keyframe_mask", mask)
        object.__setattr__(self, "data", concat)

    @property
    def latent_lengths(self) -> tuple[int, ...]:
        return tuple(c.latent_frames for c in self.chunks)

    @classmethod
    def from_chunks(cls, chunks) -> "MultiChunkLatent":
        chunks = tuple(chunks)
        total = sum(c.latent_frames for c in chunks)
        mask = np.zeros(total, dtype=bool)
        pos = 0
        for c in chunks:
            mask[pos] = True
            pos += c.latent_frames
        return cls(chunks, mask)


def pool_frames(frames: np.ndarray) -> np.ndarray:
    """2x2 spatial average pool over (..., C, H, W)."""
    *lead, c, h, w = frames.shape
    if h % SPATIAL_FACTOR or w % SPATIAL_FACTOR:
        raise ValueError(f"H, W must be divisible by {SPATIAL_FACTOR}, got {h}x{w}")
    x = frames.reshape(*lead, c, h // 2, 2, w // 2, 2)
    return x.mean(axis=(-3, -1))


def encode_chunk(frames: np.ndarray) -> LatentChunk:
    """Causal encode of a (L, C, H, W) chunk, L == 1 (mod 4)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4:
        raise ValueError(f"chunk must be (L, C, H, W), got shape {frames.shape}")
    L = frames.shape[0]
    if L < 1 or L % TEMPORAL_GROUP != 1:
        raise ValueError(f"chunk length must be 4n+1, got {L}")
    head = pool_frames(frames[0])[None]
    if L == 1:
        return LatentChunk(head)
    groups = frames[1:].reshape(-1, TEMPORAL_GROUP, *frames.shape[1:]).mean(axis=1)
    return LatentChunk(np.concatenate([head, pool_frames(groups)], axis=0))


def encode_frame(frame: np.ndarray) -> np.ndarray:
    """Single keyframe (C, H, W) -> its (1, d, h, w) latent."""
    return encode_chunk(np.asarray(frame, dtype=np.float64)[None]).data


def decode_chunk(latent: LatentChunk) -> np.ndarray:
    """Invert the temporal grouping by repetition and upsample 2x nearest."""
    z = latent.data
    frames = np.concatenate([z[:1], np.repeat(z[1:], TEMPORAL_GROUP, axis=0)], axis=0)
    return np.repeat(np.repeat(frames, 2, axis=-2), 2, axis=-1)


def encode_multichunk(chunk_frame_list) -> MultiChunkLatent:
    """Encode chunks independently; mask true at each chunk's first latent."""
    chunk_frame_list = list(chunk_frame_list)
    if not chunk_frame_list:
        raise ValueError("at least one chunk is required")
    return MultiChunkLatent.from_chunks(encode_chunk(f) for f in chunk_frame_list)


def encode_video(video: Video, plan: ChunkPlan) -> MultiChunkLatent:
    return encode_multichunk(split_frames(video.data, plan))


def decode_multichunk(latent: MultiChunkLatent) -> np.ndarray:
    """Concatenated (T, C, H, W) frames for all chunks."""
    return np.concatenate([decode_chunk(c) for c in latent.chunks], axis=0)


# -- ablation encoders -----------------------------------------------------------


def naive_insert_encode(frames: np.ndarray, keyframe_indices) -> MultiChunkLatent:
    """Whole-video causal encode with keyframe latents overwritten in place.

    The overwrite at latent round(k/4) breaks the causal relationship between
    that latent and frames 4i-3..4i; kept as a faithful ablation.
    """
    frames = np.asarray(frames, dtype=np.float64)
    base = encode_chunk(frames).data.copy()
    f = base.shape[0]
    mask = np.zeros(f, dtype=bool)
    for k in keyframe_indices:
        k = int(k)
        if not 0 <= k < frames.shape[0]:
            raise ValueError(f"keyframe {k} outside [0, {frames.shape[0]})")
        p = (k + 2) // TEMPORAL_GROUP  # round(k/4), half up
        if p >= f:
            p = f - 1
        base[p] = pool_frames(frames[k])
        mask[p] = True
    return MultiChunkLatent((LatentChunk(base),), mask)


def replicate_encode(frames: np.ndarray, plan: ChunkPlan) -> MultiChunkLatent:
    """Per chunk, copy the keyframe over frames 1..4 before causal encoding."""
    chunks = []
    for part in split_frames(np.asarray(frames, dtype=np.float64), plan):
        if part.shape[0] < 5:
            raise ValueError(f"replication needs chunks of >= 5 frames, got {part.shape[0]}")
        rep = part.copy()
        rep[1:5] = rep[0]
        chunks.append(rep)
    return encode_multichunk(chunks)


# -- latent file I/O ---------------------------------------------------------------


def save_latent(path, latent: MultiChunkLatent):
    with open(path, "wb") as f:
        f.write(LATENT_MAGIC)
        f.write(struct.pack("<I", len(latent.chunks)))
        for c in latent.chunks:
            f.write(struct.pack("<4I", *c.data.shape))
            f.write(np.ascontiguousarray(c.data).astype("<f8", copy=False).tobytes())
        f.write(latent.keyframe_mask.astype(np.uint8).tobytes())


def load_latent(path) -> MultiChunkLatent:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != LATENT_MAGIC:
        raise LatentFormatError(f"bad magic {buf[:4]!r} at byte 0 (want {LATENT_MAGIC!r})")
    off = 4

    def take(n, what):
        nonlocal off
        if off + n > len(buf):
            raise LatentFormatError(f"truncated latent file: {what} at byte {off}")
        part = buf[off : off + n]
        off += n
        return part

    (n_chunks,) = struct.unpack("<I", take(4, "chunk count"))
    if n_chunks == 0:
        raise LatentFormatError("latent file holds zero chunks at byte 4")
    chunks = []
    for i in range(n_chunks):
        dims = struct.unpack("<4I", take(16, f"chunk {i} dims"))
        size = int(np.prod(dims))
        data = np.frombuffer(take(8 * size, f"chunk {i} data"), dtype="<f8")
        chunks.append(LatentChunk(data.reshape(dims).copy()))
    total = sum(c.latent_frames for c in chunks)
    mask = np.frombuffer(take(total, "mask bytes"), dtype=np.uint8).astype(bool)
    if off != len(buf):
        raise LatentFormatError(f"{len(buf) - off} trailing bytes at byte {off}")
    return MultiChunkLatent(tuple(chunks), mask)
