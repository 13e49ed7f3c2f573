"""Hot numeric kernels: numba-jitted with pure-numpy fallbacks.

The backend is picked once at import time from the MCFLOW_BACKEND
environment variable: "numba" (error if numba is missing), "numpy", or
unset (numba when importable, else numpy).  Both implementations of every
kernel remain importable so parity tests and benchmarks can compare them.

All kernels take C-contiguous float64 arrays.  Callers (mcflow.tensor)
own the reshaping; everything here is strictly 1D/2D.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAS_NUMBA = False


# ---------------------------------------------------------------------------
# pure numpy


def _softmax_rows_np(x):
    """x (R, M) -> row-wise softmax, new array."""
    shifted = x - x.max(axis=1, keepdims=True)
    out = np.exp(shifted)
    out /= out.sum(axis=1, keepdims=True)
    return out


def _softmax_rows_grad_np(out, g):
    """out = softmax(x), g = dL/dout, both (R, M) -> dL/dx."""
    dot = (out * g).sum(axis=1, keepdims=True)
    return out * (g - dot)


def _layernorm_rows_np(x, eps):
    """x (R, M) -> (xhat, rstd): per-row zero mean unit variance, no affine."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    return xc * rstd[:, None], rstd


def _layernorm_rows_grad_np(xhat, rstd, g):
    gm = g.mean(axis=1, keepdims=True)
    proj = (g * xhat).mean(axis=1, keepdims=True)
    return rstd[:, None] * (g - gm - xhat * proj)


def _rope_rotate_np(x, cos, sin):
    """Rotate consecutive pairs of x (R, D) by angles given as cos/sin (R, D/2)."""
    x0 = x[:, 0::2]
    x1 = x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = x0 * cos - x1 * sin
    out[:, 1::2] = x0 * sin + x1 * cos
    return out


def _adam_update_np(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """In-place Adam step on flat f64 arrays; bc1/bc2 are 1 - beta**step."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    denom = np.sqrt(v / bc2) + eps
    p -= lr * (m / bc1) / denom


# ---------------------------------------------------------------------------
# numba

if _HAS_NUMBA:

    @njit(cache=True, fastmath=True)
    def _softmax_rows_nb(x):
        rows, cols = x.shape
        out = np.empty_like(x)
        for r in range(rows):
            hi = x[r, 0]
            for c in range(1, cols):
                if x[r, c] > hi:
                    hi = x[r, c]
            total = 0.0
            for c in range(cols):
                e = np.exp(x[r, c] - hi)
                out[r, c] = e
                total += e
            inv = 1.0 / total
            for c in range(cols):
                out[r, c] *= inv
        return out

    @njit(cache=True, fastmath=True)
    def _softmax_rows_grad_nb(out, g):
        rows, cols = out.shape
        gx = np.empty_like(out)
        for r in range(rows):
            dot = 0.0
            for c in range(cols):
                dot += out[r, c] * g[r, c]
            for c in range(cols):
                gx[r, c] = out[r, c] * (g[r, c] - dot)
        return gx

    @njit(cache=True, fastmath=True)
    def _layernorm_rows_nb(x, eps):
        rows, cols = x.shape
        xhat = np.empty_like(x)
        rstd = np.empty(rows, dtype=np.float64)
        inv_m = 1.0 / cols
        for r in range(rows):
            mu = 0.0
            for c in range(cols):
                mu += x[r, c]
            mu *= inv_m
            var = 0.0
            for c in range(cols):
                d = x[r, c] - mu
                var += d * d
            var *= inv_m
            rs = 1.0 / np.sqrt(var + eps)
            rstd[r] = rs
            for c in range(cols):
                xhat[r, c] = (x[r, c] - mu) * rs
        return xhat, rstd

    @njit(cache=True, fastmath=True)
    def _layernorm_rows_grad_nb(xhat, rstd, g):
        rows, cols = xhat.shape
        gx = np.empty_like(xhat)
        inv_m = 1.0 / cols
        for r in range(rows):
            gm = 0.0
            proj = 0.0
            for c in range(cols):
                gm += g[r, c]
                proj += g[r, c] * xhat[r, c]
            gm *= inv_m
            proj *= inv_m
            rs = rstd[r]
            for c in range(cols):
                gx[r, c] = rs * (g[r, c] - gm - xhat[r, c] * proj)
        return gx

    @njit(cache=True, fastmath=True)
    def _rope_rotate_nb(x, cos, sin):
        rows, pairs = cos.shape
        out = np.empty_like(x)
        for r in range(rows):
            for p in range(pairs):
                a = x[r, 2 * p]
                b = x[r, 2 * p + 1]
                out[r, 2 * p] = a * cos[r, p] - b * sin[r, p]
                out[r, 2 * p + 1] = a * sin[r, p] + b * cos[r, p]
        return out

    @njit(cache=True, fastmath=True)
    def _adam_update_nb(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
        n = p.shape[0]
        for i in range(n):
            gi = g[i]
            mi = beta1 * m[i] + (1.0 - beta1) * gi
            vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
            m[i] = mi
            v[i] = vi
            p[i] -= lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)


_KERNEL_NAMES = (
    "softmax_rows",
    "softmax_rows_grad",
    "layernorm_rows",
    "layernorm_rows_grad",
    "rope_rotate",
    "adam_update",
)

_BACKENDS = {"numpy": {name: globals()[f"_{name}_np"] for name in _KERNEL_NAMES}}
if _HAS_NUMBA:
    _BACKENDS["numba"] = {name: globals()[f"_{name}_nb"] for name in _KERNEL_NAMES}


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def get_backend(name: str) -> dict:
    """Kernel table for an explicit backend, for parity tests and benchmarks."""
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    return _BACKENDS[name]


def _resolve_backend() -> str:
    requested = os.environ.get("MCFLOW_BACKEND", "").strip().lower()
    if requested == "":
        return "numba" if _HAS_NUMBA else "numpy"
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        if not _HAS_NUMBA:
            raise RuntimeError("MCFLOW_BACKEND=numba but numba is not importable")
        return "numba"
    raise ValueError(f"MCFLOW_BACKEND must be 'numba' or 'numpy', got {requested!r}")


BACKEND = _resolve_backend()

softmax_rows = _BACKENDS[BACKEND]["softmax_rows"]
softmax_rows_grad = _BACKENDS[BACKEND]["softmax_rows_grad"]
layernorm_rows = _BACKENDS[BACKEND]["layernorm_rows"]
layernorm_rows_grad = _BACKENDS[BACKEND]["layernorm_rows_grad"]
rope_rotate = _BACKENDS[BACKEND]["rope_rotate"]
adam_update = _BACKENDS[BACKEND]["adam_update"]


def rope_rotate_grad(g, cos, sin):
    """Backward of rope_rotate: rotate the upstream grad by the inverse angle."""
    return rope_rotate(g, cos, -sin)
