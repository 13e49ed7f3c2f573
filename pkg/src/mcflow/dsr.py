"""Super resolution stage: degradation, latent upsampling, HR injection.

LR training inputs come from a synthetic degradation (3x3 Gaussian blur,
2x2 area downsample, additive noise, clamp).  The LR latent is upsampled
to HR latent shape and keyframe latent frames are replaced by their HR
encodings, making those positions exact fixed points of the interpolation
z_t = (1-t) z_hr + t z_lr.  Sampling starts at the injected LR latent
(t=1, no noise, fully deterministic) and integrates the learned velocity
to t=0 with per-step re-injection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .chunking import ChunkPlan, KeyframeRequest, keyframe_latent_positions, snap_keyframes
from .codec import LatentChunk, MultiChunkLatent, decode_multichunk, encode_frame, encode_video
from .dit import ModelConfig, dit_forward, init_params, patchify_array
from .flowgen import FlowSample, cosine_lr, split_latent, train_step, velocity_target
from .params import ParamStore
from .rng import make_rng
from .video import Video

SR_SCENARIO_ID = 0  # SR is unconditional; every sample uses embedding row 0


@dataclass(frozen=True)
class DegradeParams:
    # defaults leave ~3 dB of headroom between the nearest-up baseline and
    # the codec ceiling; weaker settings leave SR nothing to recover
    blur_sigma: float = 1.0
    noise_sigma: float = 0.05
    scale: int = 2

    def __post_init__(self):
        if not 0.0 <= self.blur_sigma <= 1.0:
            raise ValueError(f"blur_sigma must be in [0, 1], got {self.blur_sigma}")
        if not 0.0 <= self.noise_sigma <= 0.05:
            raise ValueError(f"noise_sigma must be in [0, 0.05], got {self.noise_sigma}")
        if self.scale != 2:
            raise ValueError(f"only scale 2 is supported, got {self.scale}")


@dataclass(frozen=True)
class SRPair:
    z_hr: MultiChunkLatent
    z_lr_up: np.ndarray  # upsampled + HR-injected, same shape as z_hr.data
    positions: tuple[int, ...]


def _blur3(frames: np.ndarray, sigma: float) -> np.ndarray:
    """Separable 3x3 Gaussian blur over (..., H, W), edge-replicated.

    Written as center + side corrections so constant regions pass
    through bit-exactly regardless of weight rounding.
    """
    if sigma == 0.0:
        return frames
    e = math.exp(-1.0 / (2.0 * sigma * sigma))
    w = e / (1.0 + 2.0 * e)  # each side tap; center carries the rest

    def conv(x, axis):
        pad = [(0, 0)] * x.ndim
        pad[axis] = (1, 1)
        p = np.pad(x, pad, mode="edge")
        lo = [slice(None)] * x.ndim
        hi = [slice(None)] * x.ndim
        lo[axis] = slice(None, -2)
        hi[axis] = slice(2, None)
        return x + w * (p[tuple(lo)] - x) + w * (p[tuple(hi)] - x)

    return conv(conv(frames, frames.ndim - 2), frames.ndim - 1)


def degrade(hr: Video, p: DegradeParams, seed: int) -> Video:
    """Blur, 2x2 area downsample, add noise, clamp; halves H and W."""
    arr = hr.data
    t, c, h, w = arr.shape
    if h % 2 or w % 2:
        raise ValueError(f"H, W must be even to downsample, got {h}x{w}")
    x = _blur3(arr, p.blur_sigma)
    x = x.reshape(t, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    if p.noise_sigma > 0.0:
        x = x + p.noise_sigma * make_rng(seed, stream=3).standard_normal(x.shape)
    return Video(np.clip(x, 0.0, 1.0))


def upsample_latent(z: np.ndarray) -> np.ndarray:
    """Nearest-neighbor 2x spatial upsample of (f, d, h, w)."""
    return np.repeat(np.repeat(z, 2, axis=-2), 2, axis=-1)


def inject_hr_keyframes(z_lr_up: np.ndarray, hr_keyframe_latents, positions) -> np.ndarray:
    """Copy of z_lr_up with HR latents replacing the listed latent frames."""
    positions = [int(p) for p in positions]
    hr_keyframe_latents = [np.asarray(z, dtype=np.float64) for z in hr_keyframe_latents]
    if len(hr_keyframe_latents) != len(positions):
        raise ValueError(f"{len(hr_keyframe_latents)} latents for {len(positions)} positions")
    out = z_lr_up.copy()
    for pos, zk in zip(positions, hr_keyframe_latents):
        if not 0 <= pos < out.shape[0]:
            raise ValueError(f"latent position {pos} outside [0, {out.shape[0]})")
        if zk.shape != (1,) + out.shape[1:]:
            raise ValueError(f"HR latent shape {zk.shape} != (1, {out.shape[1:]})")
        out[pos] = zk[0]
    return out


def sr_interpolate(z_hr: np.ndarray, z_lr_cond: np.ndarray, t: float) -> np.ndarray:
    """(1-t) z_hr + t z_lr; positions where both agree stay exact."""
    if z_hr.shape != z_lr_cond.shape:
        raise ValueError(f"z_hr shape {z_hr.shape} != z_lr shape {z_lr_cond.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    return np.where(z_hr == z_lr_cond, z_hr, (1.0 - t) * z_hr + t * z_lr_cond)


def build_sr_pair(hr: Video, plan: ChunkPlan, p: DegradeParams, seed: int) -> SRPair:
    """Degrade, encode both sides, upsample LR, inject HR keyframe latents."""
    z_hr = encode_video(hr, plan)
    lr = degrade(hr, p, seed)
    z_lr = upsample_latent(encode_video(lr, plan).data)
    positions = keyframe_latent_positions(plan)
    hr_lat = [z_hr.data[pos : pos + 1] for pos in positions]
    return SRPair(z_hr, inject_hr_keyframes(z_lr, hr_lat, positions), positions)


def sr_flow_sample(pair: SRPair, t: float) -> FlowSample:
    """Training sample: interpolant between HR (t=0) and injected LR (t=1)."""
    z0 = pair.z_hr.data
    mask = pair.z_hr.keyframe_mask
    return FlowSample(
        z0=z0,
        z1=pair.z_lr_up,
        t=float(t),
        zt=sr_interpolate(z0, pair.z_lr_up, t),
        mask=mask,
        target=velocity_target(z0, pair.z_lr_up, mask),
        scenario_id=SR_SCENARIO_ID,
        latent_lengths=pair.z_hr.latent_lengths,
    )


def train_sr(
    hr_videos,
    plan: ChunkPlan,
    p: DegradeParams,
    cfg: ModelConfig,
    steps: int,
    batch: int,
    lr: float,
    seed: int,
) -> tuple[ParamStore, list[float]]:
    """Train the SR velocity model on freshly degraded pairs each draw."""
    hr_videos = list(hr_videos)
    if not hr_videos:
        raise ValueError("at least one HR video is required")
    if steps < 1 or batch < 1:
        raise ValueError(f"steps and batch must be >= 1, got {steps}, {batch}")
    store = init_params(cfg, seed=seed, ada_zero=True)
    rng = make_rng(seed, stream=4)
    losses = []
    for step in range(steps):
        samples = []
        for _ in range(batch):
            i = int(rng.integers(len(hr_videos)))
            t = float(rng.uniform())
            while t == 0.0:
                t = float(rng.uniform())
            pair = build_sr_pair(hr_videos[i], plan, p, seed=int(rng.integers(2**62)))
            samples.append(sr_flow_sample(pair, t))
        loss = train_step(store, samples, cfg, cosine_lr(step, steps, lr))
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {step}")
        losses.append(loss)
    return store, losses


def sr_sample(
    store: ParamStore,
    cfg: ModelConfig,
    lr_video: Video,
    hr_keyframes,
    req: KeyframeRequest,
    n_steps: int,
) -> Video:
    """Deterministic LR -> HR refinement conditioned on HR keyframes."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    plan = snap_keyframes(req)
    images = [np.asarray(im, dtype=np.float64) for im in hr_keyframes]
    if len(images) != plan.n_chunks:
        raise ValueError(f"{len(images)} HR keyframes for {plan.n_chunks} chunks")
    c, h, w = images[0].shape
    if (lr_video.channels, lr_video.height, lr_video.width) != (c, h // 2, w // 2):
        raise ValueError(
            f"LR dims {lr_video.data.shape[1:]} are not half of HR keyframe dims {(c, h, w)}"
        )
    positions = keyframe_latent_positions(plan)
    hr_lat = [encode_frame(im) for im in images]
    z_lr = upsample_latent(encode_video(lr_video, plan).data)
    z = inject_hr_keyframes(z_lr, hr_lat, positions)

    lengths = plan.latent_lengths
    ts = np.linspace(1.0, 0.0, n_steps + 1)
    for i in range(n_steps):
        with T.no_grad():
            grid = patchify_array(z, lengths, cfg, store)
            v = dit_forward(grid, float(ts[i]), SR_SCENARIO_ID, store, cfg).data
        z = z - (ts[i] - ts[i + 1]) * v
        z = inject_hr_keyframes(z, hr_lat, positions)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"non-finite sampler state at step {i}")

    chunks = tuple(LatentChunk(part) for part in split_latent(z, lengths))
    mask = np.zeros(sum(lengths), dtype=bool)
    mask[list(positions)] = True
    frames = decode_multichunk(MultiChunkLatent(chunks, mask))
    return Video(np.clip(frames, 0.0, 1.0))
