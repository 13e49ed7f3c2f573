"""Multi-chunk rotary position embeddings.

Temporal indices follow the recurrence u_0 = 0, u_i = u_{i-1} + 0.25 when
latent i starts a chunk (i.e. is a keyframe latent, first chunk excluded)
and u_{i-1} + 1 otherwise, so chunk boundaries advance by a quarter step
instead of jumping.  Rotation angles split the head dimension 2:1:1 into
temporal/height/width bands; band angles are pos / 10000^(2m/band_dim),
continuous in position, which is what makes fractional u well defined.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T

ROPE_BASE = 10000.0
KEYFRAME_STEP = 0.25


def mc_temporal_indices(latent_lengths) -> np.ndarray:
    """Fractional temporal index per concatenated latent frame."""
    lengths = [int(f) for f in latent_lengths]
    if not lengths:
        raise ValueError("at least one chunk length is required")
    if any(f < 1 for f in lengths):
        raise ValueError(f"latent lengths must be >= 1, got {lengths}")
    out = np.empty(sum(lengths))
    pos = 0
    u = 0.0
    for j, f in enumerate(lengths):
        for i in range(f):
            if pos == 0:
                u = 0.0
            elif i == 0:
                u += KEYFRAME_STEP
            else:
                u += 1.0
            out[pos] = u
            pos += 1
    return out


def band_dims(head_dim: int) -> tuple[int, int, int]:
    """2:1:1 split of head_dim into (temporal, height, width) band sizes."""
    if head_dim < 8 or head_dim % 8 != 0:
        raise ValueError(f"head_dim must be a positive multiple of 8, got {head_dim}")
    dt = head_dim // 2
    dy = head_dim // 4
    return dt, dy, head_dim - dt - dy


def band_freqs(band_dim: int) -> np.ndarray:
    """Angular frequency per rotation pair: 10000^(-2m/band_dim)."""
    m = np.arange(band_dim // 2)
    return ROPE_BASE ** (-2.0 * m / band_dim)


def rope_phases(u: float, y: int, x: int, head_dim: int) -> np.ndarray:
    """Rotation angles (head_dim/2,) for one token at (u, y, x)."""
    dt, dy, dx = band_dims(head_dim)
    return np.concatenate([u * band_freqs(dt), y * band_freqs(dy), x * band_freqs(dx)])


def phase_table(u_values, ys, xs, head_dim: int) -> np.ndarray:
    """Rotation angles (n_tokens, head_dim/2) for per-token coordinates."""
    u_values = np.asarray(u_values, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    if not u_values.shape == ys.shape == xs.shape or u_values.ndim != 1:
        raise ValueError(f"coordinate shapes differ: {u_values.shape}, {ys.shape}, {xs.shape}")
    dt, dy, dx = band_dims(head_dim)
    return np.concatenate(
        [
            u_values[:, None] * band_freqs(dt)[None],
            ys[:, None] * band_freqs(dy)[None],
            xs[:, None] * band_freqs(dx)[None],
        ],
        axis=1,
    )


def apply_rope(q_or_k, phases: np.ndarray):
    """Rotate (tokens, head_dim) rows by per-token phases; norm preserving.

    Accepts a plain array (returns an array) or an autodiff Tensor (returns
    a Tensor participating in the graph).
    """
    is_tensor = isinstance(q_or_k, T.Tensor)
    data = q_or_k.data if is_tensor else np.asarray(q_or_k, dtype=np.float64)
    if data.ndim != 2 or phases.shape != (data.shape[0], data.shape[1] // 2) or data.shape[1] % 2:
        raise ValueError(f"phase shape {phases.shape} does not match tokens {data.shape}")
    cos = np.cos(phases)
    sin = np.sin(phases)
    if is_tensor:
        return T.rope(q_or_k, cos, sin)
    from . import kernels

    return kernels.rope_rotate(np.ascontiguousarray(data), cos, sin)
