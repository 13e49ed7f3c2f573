"""Synthetic multi-shot corpus with ground-truth keyframes and captions.

Each scenario renders a soft-edged shape drifting linearly over a flat
background, optionally with one hard cut (background and shape swap) at a
known frame.  Shot palettes are kept far apart so the cut is detectable by
frame differencing, while per-frame motion stays well under the cut
threshold so only the planted cut trips the detector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .rng import make_rng
from .video import Video

# Per-shot palettes: backgrounds at least 0.3 apart so cuts pop.
SHOT1_BG = (0.05, 0.30)
SHOT1_FG = (0.65, 0.95)
SHOT2_BG = (0.60, 0.90)
SHOT2_FG = (0.05, 0.40)
# Sustained speed band (px/frame at the 32px reference): fast enough that
# temporal pooling dominates the round trip, slow enough that intra-shot
# frame diffs stay well under the cut-detection band.
SPEED_RANGE = (0.55, 0.85)
MAX_CYCLES = 4.5


@dataclass(frozen=True)
class Shot:
    kind: str  # "square" or "disc"
    size: float  # full width / diameter in px
    fg: float
    bg: float
    start: tuple[float, float]  # (y, x) center at shot start
    end: tuple[float, float]  # (y, x) center at shot end
    cycles: float = 0.5  # ping-pong traversals of start->end; k+0.5 ends at `end`

    def __post_init__(self):
        if self.kind not in ("square", "disc"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.size <= 0:
            raise ValueError(f"size must be positive, got {self.size}")
        if self.cycles <= 0 or self.cycles % 1.0 != 0.5:
            raise ValueError(f"cycles must be a positive half-integer, got {self.cycles}")


@dataclass(frozen=True)
class Scenario:
    id: int
    length: int
    cut: int | None  # first frame of shot 2, if any
    shots: tuple[Shot, ...]
    seed: int

    def __post_init__(self):
        if self.length < 1:
            raise ValueError(f"length must be >= 1, got {self.length}")
        want = 2 if self.cut is not None else 1
        if len(self.shots) != want:
            raise ValueError(f"{want} shots required, got {len(self.shots)}")
        if self.cut is not None and not 1 <= self.cut < self.length:
            raise ValueError(f"cut {self.cut} outside [1, {self.length})")


@dataclass(frozen=True)
class StructuredCaption:
    holistic: str
    shots: tuple[dict, ...]  # each: {"visual", "camera", "characters"}

    def to_json(self) -> str:
        return json.dumps({"holistic": self.holistic, "shots": list(self.shots)}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "StructuredCaption":
        obj = json.loads(text)
        return cls(obj["holistic"], tuple(obj["shots"]))


def _coverage(shot: Shot, cy: float, cx: float, H: int, W: int) -> np.ndarray:
    """Soft (1px antialiased) shape coverage in [0,1] per pixel."""
    yy = np.arange(H, dtype=np.float64)[:, None]
    xx = np.arange(W, dtype=np.float64)[None, :]
    half = shot.size / 2.0
    if shot.kind == "disc":
        dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        return np.clip(half + 0.5 - dist, 0.0, 1.0)
    ay = np.clip(half + 0.5 - np.abs(yy - cy), 0.0, 1.0)
    ax = np.clip(half + 0.5 - np.abs(xx - cx), 0.0, 1.0)
    return ay * ax


def _check_in_canvas(shot: Shot, H: int, W: int):
    reach = shot.size / 2.0 + 0.5
    for cy, cx in (shot.start, shot.end):
        if not (reach <= cy <= H - 1 - reach and reach <= cx <= W - 1 - reach):
            raise ValueError(
                f"shape leaves the {H}x{W} canvas: center ({cy:.1f}, {cx:.1f}), reach {reach:.1f}"
            )


def render_shot_frame(shot: Shot, frac: float, H: int, W: int, C: int) -> np.ndarray:
    """One (C, H, W) frame with the shape at fraction `frac` along its path.

    The path bounces along the start-end segment `cycles` times (triangle
    wave), so sustained speed is 2 * cycles * |end - start| / span while the
    shape never leaves the segment.
    """
    x = (shot.cycles * frac) % 1.0
    p = 2.0 * x if x <= 0.5 else 2.0 - 2.0 * x
    cy = shot.start[0] + p * (shot.end[0] - shot.start[0])
    cx = shot.start[1] + p * (shot.end[1] - shot.start[1])
    alpha = _coverage(shot, cy, cx, H, W)
    frame = shot.bg + (shot.fg - shot.bg) * alpha
    return np.broadcast_to(frame, (C, H, W)).copy()


def _caption_for(s: Scenario) -> StructuredCaption:
    shot_caps = []
    for shot in s.shots:
        dy = shot.end[0] - shot.start[0]
        dx = shot.end[1] - shot.start[1]
        vert = "down" if dy > 0 else "up"
        horiz = "right" if dx > 0 else "left"
        tone = "bright" if shot.fg > shot.bg else "dark"
        shot_caps.append(
            {
                "visual": f"a {tone} {shot.kind} of size {shot.size:.0f} px on a flat background",
                "camera": f"static camera, subject drifting {vert} and {horiz}",
                "characters": [f"{shot.kind}-{s.id}"],
            }
        )
    n = len(s.shots)
    holistic = (
        f"scenario {s.id}: {n}-shot clip, {s.length} frames"
        + (f", hard cut at frame {s.cut}" if s.cut is not None else "")
    )
    return StructuredCaption(holistic, tuple(shot_caps))


def synth_video(s: Scenario, H: int = 32, W: int = 32, C: int = 1) -> tuple[Video, list[int], StructuredCaption]:
    """Render a scenario; returns (video, ground-truth keyframes, caption).

    Ground-truth keyframes are frame 0, the cut frame if present, and the
    start of the final temporal group (length - 4 when length > 4).
    """
    if H < 2 or W < 2 or C < 1:
        raise ValueError(f"invalid dims {H}x{W}x{C}")
    for shot in s.shots:
        _check_in_canvas(shot, H, W)
    spans = [(0, s.length)] if s.cut is None else [(0, s.cut), (s.cut, s.length)]
    frames = np.empty((s.length, C, H, W))
    for shot, (a, b) in zip(s.shots, spans):
        span = max(b - a - 1, 1)
        for f in range(a, b):
            frames[f] = render_shot_frame(shot, (f - a) / span, H, W, C)
    keyframes = [0]
    if s.cut is not None:
        keyframes.append(s.cut)
    if s.length > 4 and (s.length - 4) not in keyframes:
        keyframes.append(s.length - 4)
    return Video(frames), keyframes, _caption_for(s)


def default_cut(total_frames: int) -> int | None:
    """Mid-video cut admissible as a [0, cut] request, or None if impossible."""
    if total_frames % 4 != 2:
        return None
    cut = total_frames // 2
    cut -= (cut - 1) % 4  # largest index <= T/2 that is 1 (mod 4)
    return cut if cut >= 5 else None


def make_scenarios(
    n: int,
    length: int,
    H: int = 32,
    W: int = 32,
    cut_frame: int | None = None,
    seed: int = 0,
) -> list[Scenario]:
    """n deterministic scenarios with distinct shapes, palettes, and paths."""
    if n < 1:
        raise ValueError(f"need n >= 1 scenarios, got {n}")
    out = []
    for i in range(n):
        rng = make_rng(seed, stream=1000 + i)
        shot_spans = [length] if cut_frame is None else [cut_frame, length - cut_frame]
        shots = []
        for j, span in enumerate(shot_spans):
            bg_lo, bg_hi = SHOT1_BG if j == 0 else SHOT2_BG
            fg_lo, fg_hi = SHOT1_FG if j == 0 else SHOT2_FG
            # sized against a 32px reference so any canvas fits the same layout
            scale = min(H, W) / 32.0
            size = float(rng.uniform(11.0, 16.0) * scale)
            reach = size / 2.0 + 0.5
            lo_y, hi_y = reach, H - 1 - reach
            lo_x, hi_x = reach, W - 1 - reach
            if hi_y < lo_y or hi_x < lo_x:
                raise ValueError(f"canvas {H}x{W} too small for a size-{size:.2f} shape")
            min_dist = 6.0 * scale
            start = (float(rng.uniform(lo_y, hi_y)), float(rng.uniform(lo_x, hi_x)))
            while True:
                end = (float(rng.uniform(lo_y, hi_y)), float(rng.uniform(lo_x, hi_x)))
                dist = float(np.hypot(end[0] - start[0], end[1] - start[1]))
                if dist >= min(min_dist, 0.9 * np.hypot(hi_y - lo_y, hi_x - lo_x)):
                    break
            # pick the half-integer bounce count closest to the target speed
            speed = float(rng.uniform(*SPEED_RANGE)) * scale
            cycles = round(speed * max(span - 1, 1) / (2.0 * dist) + 0.5) - 0.5
            cycles = float(min(max(cycles, 0.5), MAX_CYCLES))
            shots.append(
                Shot(
                    kind="square" if rng.uniform() < 0.5 else "disc",
                    size=size,
                    fg=float(rng.uniform(fg_lo, fg_hi)),
                    bg=float(rng.uniform(bg_lo, bg_hi)),
                    start=start,
                    end=end,
                    cycles=cycles,
                )
            )
        out.append(Scenario(id=i, length=length, cut=cut_frame, shots=tuple(shots), seed=seed))
    return out


def detect_cuts(video: Video, threshold: float) -> list[int]:
    """Frames whose mean absolute difference from the previous exceeds threshold."""
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    diffs = np.abs(np.diff(video.data, axis=0)).mean(axis=(1, 2, 3))
    return [int(i) + 1 for i in np.nonzero(diffs > threshold)[0]]
