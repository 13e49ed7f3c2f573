"""Reverse-mode autodiff over float64 numpy arrays.

A Tensor wraps an ndarray plus an optional backward closure.  Ops build a
DAG; Tensor.backward() runs a topological sweep, accumulating gradients
into every reachable leaf with requires_grad.  Graph edges are severed as
soon as a node's backward has run so large activations free early.

Gradient buffers are never mutated in place (accumulation allocates), so
backward closures may hand out views without aliasing bugs.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels


class _GradMode:
    enabled = True


class no_grad:
    """Context manager that disables graph construction (sampling loops)."""

    def __enter__(self):
        self._prev = _GradMode.enabled
        _GradMode.enabled = False
        return self

    def __exit__(self, *exc):
        _GradMode.enabled = self._prev
        return False


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    # -- misc ---------------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tracked={self._tracked()})"

    def _tracked(self) -> bool:
        return self.requires_grad or self._backward is not None

    # -- graph --------------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        if not self._tracked():
            return
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p._tracked() and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            bw = node._backward
            if bw is None:
                continue
            bw(node.grad)
            node.grad = None
            node._backward = None
            node._parents = ()

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __truediv__(self, other):
        if isinstance(other, Tensor) or not np.isscalar(other):
            raise TypeError("tensor division only supports scalar divisors")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _accum(t: Tensor, g: np.ndarray):
    if not t._tracked():
        return
    if g.shape != t.data.shape:
        raise AssertionError(f"grad shape {g.shape} != data shape {t.data.shape}")
    t.grad = g if t.grad is None else t.grad + g


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if _GradMode.enabled and any(p._tracked() for p in parents):
        out._parents = parents
        out._backward = backward
    return out


# -- elementwise --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def mul(a, b) -> Tensor:
    if np.isscalar(b) and not isinstance(b, Tensor):
        a = _as_tensor(a)
        c = float(b)

        def bw_scalar(g):
            _accum(a, g * c)

        return _make(a.data * c, (a,), bw_scalar)

    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw)


def gelu(t: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh form)."""
    x = t.data
    c = math.sqrt(2.0 / math.pi)
    inner = c * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    data = 0.5 * x * (1.0 + th)

    def bw(g):
        dinner = c * (1.0 + 3 * 0.044715 * x * x)
        _accum(t, g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner))

    return _make(data, (t,), bw)


def silu(t: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    x = t.data
    sig = 1.0 / (1.0 + np.exp(-x))
    data = x * sig

    def bw(g):
        _accum(t, g * sig * (1.0 + x * (1.0 - sig)))

    return _make(data, (t,), bw)


# -- linear algebra ------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (2, 3) or b.ndim not in (2, 3):
        raise ValueError(f"matmul supports 2D or stacked 3D operands, got {a.shape} @ {b.shape}")
    if a.ndim != b.ndim:
        raise ValueError(f"matmul operands must have equal ndim, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if a.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ValueError(f"matmul batch dims differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(g):
        _accum(a, g @ b.data.swapaxes(-1, -2))
        _accum(b, a.data.swapaxes(-1, -2) @ g)

    return _make(data, (a, b), bw)


def softmax(t: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shape = t.data.shape
    rows = np.ascontiguousarray(t.data.reshape(-1, shape[-1]))
    out2d = kernels.softmax_rows(rows)
    data = out2d.reshape(shape)

    def bw(g):
        g2d = np.ascontiguousarray(g.reshape(-1, shape[-1]))
        _accum(t, kernels.softmax_rows_grad(out2d, g2d).reshape(shape))

    return _make(data, (t,), bw)


def rope(t: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate consecutive feature pairs of (..., D) by per-row angles.

    cos/sin must be (n_rows, D/2) for the flattened leading dims.
    """
    shape = t.data.shape
    rows = np.ascontiguousarray(t.data.reshape(-1, shape[-1]))
    if cos.shape != (rows.shape[0], shape[-1] // 2) or cos.shape != sin.shape:
        raise ValueError(f"rope angle shape {cos.shape} does not match data {shape}")
    data = kernels.rope_rotate(rows, cos, sin).reshape(shape)

    def bw(g):
        g2d = np.ascontiguousarray(g.reshape(-1, shape[-1]))
        _accum(t, kernels.rope_rotate_grad(g2d, cos, sin).reshape(shape))

    return _make(data, (t,), bw)


def layernorm(t: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    shape = t.data.shape
    rows = np.ascontiguousarray(t.data.reshape(-1, shape[-1]))
    xhat, rstd = kernels.layernorm_rows(rows, eps)
    data = xhat.reshape(shape)

    def bw(g):
        g2d = np.ascontiguousarray(g.reshape(-1, shape[-1]))
        _accum(t, kernels.layernorm_rows_grad(xhat, rstd, g2d).reshape(shape))

    return _make(data, (t,), bw)


# -- shape ---------------------------------------------------------------------


def reshape(t: Tensor, shape) -> Tensor:
    orig = t.data.shape
    data = t.data.reshape(shape)

    def bw(g):
        _accum(t, g.reshape(orig))

    return _make(data, (t,), bw)


def transpose(t: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.transpose(t.data, axes)

    def bw(g):
        _accum(t, np.transpose(g, inv))

    return _make(data, (t,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat of an empty list")
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(ts, np.split(g, splits, axis=axis)):
            _accum(t, part)

    return _make(data, tuple(ts), bw)


def tslice(t: Tensor, key) -> Tensor:
    """Basic indexing (ints, slices, tuples thereof); no fancy indexing."""
    data = t.data[key]

    def bw(g):
        gx = np.zeros_like(t.data)
        gx[key] = g
        _accum(t, gx)

    return _make(data, (t,), bw)


# -- reductions ------------------------------------------------------------------


def tsum(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = t.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            _accum(t, np.broadcast_to(g, t.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(t, np.broadcast_to(g, t.data.shape).copy())

    return _make(data, (t,), bw)


def tmean(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = t.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([t.data.shape[a] for a in axis]))
    else:
        n = t.data.shape[axis]
    return mul(tsum(t, axis=axis, keepdims=keepdims), 1.0 / n)
