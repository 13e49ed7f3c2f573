"""Masked flow-matching training and keyframe-clamped Euler sampling.

Training regresses the straight-path velocity z1 - z0 from interpolants
z_t = (1-t) z0 + t z1, except at keyframe latent frames: those stay
clamped to the clean z0 during interpolation, are excluded from the loss,
and are re-clamped after every sampler step, so the generated video hits
the conditioning keyframes exactly (up to codec round trip).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .chunking import ChunkPlan, KeyframeRequest, keyframe_latent_positions, snap_keyframes
from .codec import LatentChunk, MultiChunkLatent, decode_multichunk, encode_frame
from .dit import T_FLOOR, ModelConfig, dit_forward, init_params, patchify_array
from .params import ParamStore, adam_step
from .rng import make_rng
from .tensor import Tensor
from .video import Video


@dataclass(frozen=True)
class FlowSample:
    z0: np.ndarray
    z1: np.ndarray
    t: float
    zt: np.ndarray
    mask: np.ndarray  # bool per latent frame; True = keyframe (clamped)
    target: np.ndarray
    scenario_id: int
    latent_lengths: tuple[int, ...]


def _frame_mask(mask: np.ndarray, z_shape) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (z_shape[0],):
        raise ValueError(f"mask shape {mask.shape} != ({z_shape[0]},)")
    return mask[:, None, None, None]


def interpolate(z0: np.ndarray, z1: np.ndarray, t: float, mask: np.ndarray) -> np.ndarray:
    """(1-t) z0 + t z1 at unmasked frames; z0 untouched at masked frames."""
    if z0.shape != z1.shape:
        raise ValueError(f"z0 shape {z0.shape} != z1 shape {z1.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    m = _frame_mask(mask, z0.shape)
    return np.where(m, z0, (1.0 - t) * z0 + t * z1)


def velocity_target(z0: np.ndarray, z1: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """z1 - z0 at unmasked frames, zero at masked frames."""
    if z0.shape != z1.shape:
        raise ValueError(f"z0 shape {z0.shape} != z1 shape {z1.shape}")
    return np.where(_frame_mask(mask, z0.shape), 0.0, z1 - z0)


def make_flow_sample(
    latent: MultiChunkLatent, t: float, rng, scenario_id: int, jitter: float = 0.0
) -> FlowSample:
    """Draw z1 ~ N(0,1) and assemble the interpolant/target pair.

    With jitter > 0 the interpolant is displaced off the straight path by
    (1-t) * jitter * u * eps at unmasked frames, u ~ U(0,1), and the target
    velocity is corrected to keep pointing at the same clean z0.  The Euler
    sampler visits exactly such off-path states once the model is imperfect,
    so training on them is what makes integration self-correcting.  The
    radius scale u is drawn per sample because a fixed scale concentrates
    all displacements on one thin shell in this many dimensions, leaving the
    radii the sampler actually drifts through unsupervised.  The correction
    divides by max(t, T_FLOOR) like the model head does, so jitter=0
    reproduces the plain z1 - z0 target identically.
    """
    z0 = latent.data
    mask = latent.keyframe_mask
    z1 = rng.standard_normal(z0.shape)
    zt = interpolate(z0, z1, t, mask)
    target = velocity_target(z0, z1, mask)
    if jitter > 0.0:
        scale = (1.0 - t) * jitter * rng.uniform()
        off = np.where(
            _frame_mask(mask, z0.shape), 0.0, scale * rng.standard_normal(z0.shape)
        )
        zt = zt + off
        target = target + off / max(float(t), T_FLOOR)
    return FlowSample(
        z0=z0,
        z1=z1,
        t=float(t),
        zt=zt,
        mask=mask,
        target=target,
        scenario_id=int(scenario_id),
        latent_lengths=latent.latent_lengths,
    )


def fm_loss(predicted, target: np.ndarray, mask: np.ndarray):
    """MSE over unmasked latent elements only (masked frames excluded)."""
    pred = predicted if isinstance(predicted, Tensor) else Tensor(predicted)
    if pred.data.shape != target.shape:
        raise ValueError(f"predicted shape {pred.data.shape} != target shape {target.shape}")
    m = _frame_mask(mask, target.shape)
    n_unmasked = int((~m).sum()) * int(np.prod(target.shape[1:]))
    if n_unmasked == 0:
        raise ValueError("all latent frames are masked; nothing to supervise")
    w = np.where(m, 0.0, 1.0)
    d = pred - Tensor(target)
    return T.tsum(d * d * Tensor(w)) * (1.0 / n_unmasked)


def train_step(store: ParamStore, batch, cfg: ModelConfig, lr: float) -> float:
    """One Adam update on the t-weighted masked flow loss over a FlowSample batch.

    Each sample's velocity MSE is scaled by max(t, T_FLOOR)^2, which cancels
    the 1/t head gain inside dit_forward: the optimized quantity is a
    uniform-weight regression on the bounded displacement t * (z1 - z0).
    Unweighted velocity MSE puts weight 1/t^2 on small-t draws, and those
    spikes destabilize Adam at batch sizes this small.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("empty batch")
    store.zero_grad()
    total = 0.0
    for s in batch:
        grid = patchify_array(s.zt, s.latent_lengths, cfg, store)
        pred = dit_forward(grid, s.t, s.scenario_id, store, cfg)
        w = max(float(s.t), T_FLOOR) ** 2
        loss = fm_loss(pred, s.target, s.mask) * (w / len(batch))
        loss.backward()
        total += loss.item()
    grads = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in store.items()}
    adam_step(store, grads, lr)
    return total


def cosine_lr(step: int, steps: int, lr: float) -> float:
    """Half-cosine decay from lr at step 0 toward 0 at the final step."""
    return lr * 0.5 * (1.0 + math.cos(math.pi * step / steps))


# Cap on the off-path displacement scale for generator training draws; about
# 3x the latent drift a 20-step Euler pass accumulates on these overfit runs,
# so the sampled radii (uniform up to the cap) cover the whole drift tube.
TRAIN_JITTER = 0.3


def train_gen(
    latents,
    scenario_ids,
    cfg: ModelConfig,
    steps: int,
    batch: int,
    lr: float,
    seed: int,
) -> tuple[ParamStore, list[float]]:
    """Train a generator on per-scenario latents; returns (params, loss trace)."""
    latents = list(latents)
    scenario_ids = [int(i) for i in scenario_ids]
    if len(latents) != len(scenario_ids) or not latents:
        raise ValueError("latents and scenario_ids must be equal-length and non-empty")
    if steps < 1 or batch < 1:
        raise ValueError(f"steps and batch must be >= 1, got {steps}, {batch}")
    store = init_params(cfg, seed=seed, ada_zero=True)
    rng = make_rng(seed, stream=1)
    losses = []
    for step in range(steps):
        samples = []
        for _ in range(batch):
            i = int(rng.integers(len(latents)))
            t = float(rng.uniform())
            while t == 0.0:
                t = float(rng.uniform())
            samples.append(make_flow_sample(latents[i], t, rng, scenario_ids[i], jitter=TRAIN_JITTER))
        loss = train_step(store, samples, cfg, cosine_lr(step, steps, lr))
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {step}")
        losses.append(loss)
    return store, losses


def euler_sample(
    store,
    cfg,
    keyframe_latents,
    plan: ChunkPlan,
    n_steps: int,
    scenario_id: int,
    seed: int,
    velocity_fn=None,
) -> np.ndarray:
    """Integrate dz = -v dt from t=1 noise to t=0, re-clamping keyframes.

    velocity_fn(z, t) -> array overrides the model (oracle testing); the
    default evaluates the DiT without building autodiff graphs.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    lengths = plan.latent_lengths
    positions = keyframe_latent_positions(plan)
    kf = [np.asarray(z, dtype=np.float64) for z in keyframe_latents]
    if len(kf) != len(positions):
        raise ValueError(f"{len(kf)} keyframe latents for {len(positions)} chunks")
    total = sum(lengths)
    shape = (total,) + kf[0].shape[1:]
    for z in kf:
        if z.shape != (1,) + shape[1:]:
            raise ValueError(f"keyframe latent shape {z.shape} != (1, {shape[1:]})")

    if velocity_fn is None:
        if store is None or cfg is None:
            raise ValueError("store and cfg are required without an explicit velocity_fn")

        def velocity_fn(z, t):
            with T.no_grad():
                grid = patchify_array(z, lengths, cfg, store)
                return dit_forward(grid, t, scenario_id, store, cfg).data

    def clamp(z):
        for pos, zk in zip(positions, kf):
            z[pos] = zk[0]

    rng = make_rng(seed, stream=2)
    z = rng.standard_normal(shape)
    clamp(z)
    ts = np.linspace(1.0, 0.0, n_steps + 1)
    for i in range(n_steps):
        v = velocity_fn(z, float(ts[i]))
        z = z - (ts[i] - ts[i + 1]) * v
        clamp(z)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"non-finite sampler state at step {i}")
    return z


def split_latent(z: np.ndarray, lengths) -> list[np.ndarray]:
    bounds = np.cumsum(lengths)[:-1]
    return np.split(z, bounds, axis=0)


def generate(
    store,
    cfg: ModelConfig,
    keyframe_images,
    req: KeyframeRequest,
    n_steps: int,
    scenario_id: int,
    seed: int,
) -> Video:
    """Keyframe-conditioned video generation end to end."""
    plan = snap_keyframes(req)
    images = [np.asarray(im, dtype=np.float64) for im in keyframe_images]
    if len(images) != plan.n_chunks:
        raise ValueError(f"{len(images)} keyframe images for {plan.n_chunks} chunks")
    base = images[0].shape
    for im in images:
        if im.ndim != 3 or im.shape != base:
            raise ValueError(f"keyframe image shape {im.shape} != {base}")
    if base[0] != cfg.in_channels:
        raise ValueError(f"keyframe channels {base[0]} != configured {cfg.in_channels}")
    kf_latents = [encode_frame(im) for im in images]
    z = euler_sample(store, cfg, kf_latents, plan, n_steps, scenario_id, seed)
    chunks = tuple(LatentChunk(part) for part in split_latent(z, plan.latent_lengths))
    mask = np.zeros(plan.total_latent_frames, dtype=bool)
    mask[list(keyframe_latent_positions(plan))] = True
    frames = decode_multichunk(MultiChunkLatent(chunks, mask))
    return Video(np.clip(frames, 0.0, 1.0))
