"""Snapping requested keyframes onto an admissible chunk grid.

A video of T frames is cut into chunks at its keyframes: chunk j covers
[keyframe_j, keyframe_{j+1}) and the last chunk runs to the video end.
Every chunk length must be 4n+1 so the causal codec maps it onto
1 + (L-1)/4 latent frames; summing the congruence forces
T == n_keyframes (mod 4).  Requested keyframes move to the nearest index
satisfying the congruence, at most 2 frames away, ties toward the earlier
frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

MAX_SNAP = 2
MIN_SPACING = 5
SNAP_OFFSETS = (0, -1, 1, -2, 2)


@dataclass(frozen=True)
class KeyframeRequest:
    total_frames: int
    keyframes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "keyframes", tuple(int(k) for k in self.keyframes))
        if self.total_frames < 1:
            raise ValueError(f"total_frames must be >= 1, got {self.total_frames}")
        if not self.keyframes or self.keyframes[0] != 0:
            raise ValueError("frame 0 must be the first keyframe")
        for k in self.keyframes:
            if not 0 <= k < self.total_frames:
                raise ValueError(f"keyframe {k} outside [0, {self.total_frames})")
        if any(b <= a for a, b in zip(self.keyframes, self.keyframes[1:])):
            raise ValueError(f"keyframes must be strictly increasing, got {self.keyframes}")

    def to_json(self) -> str:
        return json.dumps({"total_frames": self.total_frames, "keyframes": list(self.keyframes)})

    @classmethod
    def from_json(cls, text: str) -> "KeyframeRequest":
        obj = json.loads(text)
        if not isinstance(obj, dict) or set(obj) != {"total_frames", "keyframes"}:
            raise ValueError("request must be a JSON object with total_frames and keyframes")
        return cls(int(obj["total_frames"]), tuple(obj["keyframes"]))


def latent_frames_for_length(length: int) -> int:
    """Latent frames produced by a chunk of `length` video frames."""
    if length < 1 or length % 4 != 1:
        raise ValueError(f"chunk length must be 4n+1, got {length}")
    return 1 + (length - 1) // 4


@dataclass(frozen=True)
class ChunkPlan:
    total_frames: int
    starts: tuple[int, ...]
    offsets: tuple[int, ...]

    @property
    def n_chunks(self) -> int:
        return len(self.starts)

    @property
    def lengths(self) -> tuple[int, ...]:
        ends = self.starts[1:] + (self.total_frames,)
        return tuple(e - s for s, e in zip(self.starts, ends))

    @property
    def latent_lengths(self) -> tuple[int, ...]:
        return tuple(latent_frames_for_length(n) for n in self.lengths)

    @property
    def total_latent_frames(self) -> int:
        return sum(self.latent_lengths)


def keyframe_latent_positions(plan: ChunkPlan) -> tuple[int, ...]:
    """Global latent index of each chunk's first (keyframe) latent frame."""
    pos, acc = [], 0
    for f in plan.latent_lengths:
        pos.append(acc)
        acc += f
    return tuple(pos)


def nearest_admissible_total(total: int, n_keyframes: int) -> int:
    """Closest frame count satisfying total == n_keyframes (mod 4); ties go up."""
    up = (n_keyframes - total) % 4
    down = 4 - up
    return total + up if up <= down else total - down


def snap_keyframes(request: KeyframeRequest) -> ChunkPlan:
    """Greedy left-to-right snap of requested keyframes onto the chunk grid."""
    total = request.total_frames
    n = len(request.keyframes)
    if total % 4 != n % 4:
        raise ValueError(
            f"total_frames={total} cannot close a 4n+1 final chunk with {n} keyframes; "
            f"nearest admissible total_frames is {nearest_admissible_total(total, n)}"
        )
    starts = [0]
    offsets = [0]
    for k in request.keyframes[1:]:
        prev = starts[-1]
        chosen = None
        for off in SNAP_OFFSETS:
            s = k + off
            if 0 <= s < total and (s - prev) % 4 == 1:
                chosen = (s, off)
                break
        # Among any 4 consecutive in-range indices exactly one fits the
        # congruence, so a candidate always exists within +-2.
        assert chosen is not None
        starts.append(chosen[0])
        offsets.append(chosen[1])
    for a, b in zip(starts, starts[1:]):
        if b - a < MIN_SPACING:
            raise ValueError(
                f"keyframes {a} and {b} are closer than {MIN_SPACING} frames after snapping"
            )
    plan = ChunkPlan(total, tuple(starts), tuple(offsets))
    assert all(length % 4 == 1 for length in plan.lengths)
    return plan


def split_frames(frames, plan: ChunkPlan) -> list:
    """Cut a (T, ...) array into per-chunk views along axis 0."""
    if frames.shape[0] != plan.total_frames:
        raise ValueError(f"frame count {frames.shape[0]} != plan total {plan.total_frames}")
    return [frames[s : s + length] for s, length in zip(plan.starts, plan.lengths)]
