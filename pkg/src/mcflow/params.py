"""Named parameter store, Adam updates, numeric grad checking, checkpoints.

Checkpoint layout (little-endian, all payloads float64):

    magic "MCKP" | u32 tensor count
    per tensor: u32 name length | UTF-8 name | u32 rank | u32 dims... | f64 data

Round trips are bit exact, which is what the determinism suite relies on.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from . import kernels
from .tensor import Tensor, no_grad

CHECKPOINT_MAGIC = b"MCKP"


class ParamStore:
    """Ordered name -> Tensor map with Adam slots and a step counter."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.ascontiguousarray(data, dtype=np.float64)
        t = Tensor(arr, requires_grad=True)
        self._params[name] = t
        self._m[name] = np.zeros(arr.size)
        self._v[name] = np.zeros(arr.size)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        missing = [n for n in self._params if n not in state]
        extra = [n for n in state if n not in self._params]
        if missing or extra:
            raise ValueError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, t in self._params.items():
            arr = np.ascontiguousarray(state[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {arr.shape} != {t.data.shape}")
            t.data[...] = arr


def backward(loss: Tensor, store: ParamStore) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss for every parameter (zeros when unreached)."""
    store.zero_grad()
    loss.backward()
    out = {}
    for name, t in store.items():
        out[name] = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
    return out


def adam_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One bias-corrected Adam update, in place on the store's parameters."""
    for name in store.names():
        if name not in grads:
            raise ValueError(f"gradient missing for parameter {name!r}")
        if not np.all(np.isfinite(grads[name])):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    store.step += 1
    bc1 = 1.0 - beta1**store.step
    bc2 = 1.0 - beta2**store.step
    for name, t in store.items():
        g = np.ascontiguousarray(grads[name], dtype=np.float64).ravel()
        if g.size != t.data.size:
            raise ValueError(f"gradient size mismatch for {name!r}")
        kernels.adam_update(t.data.ravel(), g, store._m[name], store._v[name], lr, beta1, beta2, eps, bc1, bc2)


def grad_check(fn, store: ParamStore, eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    fn() must rebuild the scalar loss from the store's current parameters.
    Relative error per value is |analytic - numeric| / max(1, |numeric|).
    """
    analytic = backward(fn(), store)
    worst = 0.0
    with no_grad():
        for name, t in store.items():
            flat = t.data.ravel()
            gflat = analytic[name].ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = fn().item()
                flat[i] = orig - eps
                lo = fn().item()
                flat[i] = orig
                num = (hi - lo) / (2.0 * eps)
                if not math.isfinite(num) or not math.isfinite(gflat[i]):
                    raise FloatingPointError(f"non-finite gradient for {name}[{i}]")
                rel = abs(gflat[i] - num) / max(1.0, abs(num))
                if rel > worst:
                    worst = rel
    return worst


# -- checkpoint I/O ------------------------------------------------------------


def save_checkpoint(path, tensors: dict[str, np.ndarray]):
    """Write a name -> float64 array map; bit-exact on round trip."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            nb = name.encode("utf-8")
            # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
            arr = np.asarray(arr, dtype=np.float64, order="C")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            if arr.ndim:
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f8", copy=False).tobytes())


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {buf[:4]!r}")
    off = 4

    def take(n, what):
        nonlocal off
        if off + n > len(buf):
            raise CheckpointError(f"truncated checkpoint: {what} at byte {off}")
        chunk = buf[off : off + n]
        off += n
        return chunk

    (count,) = struct.unpack("<I", take(4, "tensor count"))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims")) if rank else ()
        size = 1
        for d in dims:
            size *= d
        data = np.frombuffer(take(8 * size, f"data for {name!r}"), dtype="<f8")
        if name in out:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        out[name] = data.reshape(dims).copy()
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes at byte {off}")
    return out
