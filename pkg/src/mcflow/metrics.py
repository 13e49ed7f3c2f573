"""Quality metrics: PSNR, single-scale SSIM, keyframe adherence, GSB.

Keyframe adherence scores generated frames against the codec round trip of
the conditioning keyframe, not the raw pixels: the codec is lossy, so the
round trip is the attainable ceiling and exact clamping scores +inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chunking import ChunkPlan
from .codec import LatentChunk, decode_chunk, encode_frame
from .video import Video

SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 1.0


def _pixels(v) -> np.ndarray:
    arr = v.data if isinstance(v, Video) else np.asarray(v, dtype=np.float64)
    if arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9:
        raise ValueError(f"pixel values outside [0, 1]: range [{arr.min()}, {arr.max()}]")
    return arr


def psnr(a, b) -> float:
    """10 log10(1/MSE) in dB for [0,1] pixels; equal inputs give +inf."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"shape mismatch: {pa.shape} vs {pb.shape}")
    mse = float(np.mean((pa - pb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(a, b) -> float:
    """Single-scale SSIM over non-overlapping 8x8 windows, averaged."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"shape mismatch: {pa.shape} vs {pb.shape}")
    if pa.ndim == 2:
        pa, pb = pa[None], pb[None]
    if pa.ndim != 3:
        raise ValueError(f"ssim expects a frame (C, H, W) or (H, W), got {pa.shape}")
    c, h, w = pa.shape
    k = SSIM_WINDOW
    if h < k or w < k:
        raise ValueError(f"frame {h}x{w} smaller than the {k}x{k} window")
    hw, ww = h // k, w // k
    wa = pa[:, : hw * k, : ww * k].reshape(c, hw, k, ww, k).transpose(0, 1, 3, 2, 4).reshape(c, hw * ww, k * k)
    wb = pb[:, : hw * k, : ww * k].reshape(c, hw, k, ww, k).transpose(0, 1, 3, 2, 4).reshape(c, hw * ww, k * k)
    mu_a = wa.mean(axis=2)
    mu_b = wb.mean(axis=2)
    var_a = wa.var(axis=2)
    var_b = wb.var(axis=2)
    cov = (wa * wb).mean(axis=2) - mu_a * mu_b
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(s.mean())


def keyframe_adherence(v: Video, keyframes, plan: ChunkPlan) -> float:
    """Min PSNR of generated keyframe-position frames vs codec round trips."""
    keyframes = [np.asarray(k, dtype=np.float64) for k in keyframes]
    if len(keyframes) != plan.n_chunks:
        raise ValueError(f"{len(keyframes)} keyframes for {plan.n_chunks} chunks")
    if v.frames != plan.total_frames:
        raise ValueError(f"video has {v.frames} frames, plan wants {plan.total_frames}")
    worst = math.inf
    for start, kf in zip(plan.starts, keyframes):
        ceiling = decode_chunk(LatentChunk(encode_frame(kf)))[0]
        worst = min(worst, psnr(v.data[start], ceiling))
    return worst


# -- GSB ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GsbTally:
    wins: int
    losses: int
    ties: int

    def __post_init__(self):
        for name in ("wins", "losses", "ties"):
            val = getattr(self, name)
            if not isinstance(val, (int, np.integer)) or val < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {val!r}")


def collapse_ratings(ratings) -> GsbTally:
    """5-point scale -> tally: 1,2 count as wins, 3 as tie, 4,5 as losses."""
    wins = losses = ties = 0
    for r in ratings:
        r = int(r)
        if r in (1, 2):
            wins += 1
        elif r == 3:
            ties += 1
        elif r in (4, 5):
            losses += 1
        else:
            raise ValueError(f"rating must be 1..5, got {r}")
    return GsbTally(wins, losses, ties)


def gsb(t: GsbTally) -> float:
    """(wins - losses) / (wins + losses + ties)."""
    total = t.wins + t.losses + t.ties
    if total == 0:
        raise ValueError("empty tally")
    return (t.wins - t.losses) / total
