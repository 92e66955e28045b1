"""Minimal reverse-mode autodiff over numpy arrays.

A Var wraps an ndarray and remembers, per parent, a VJP closure. ``grad``
walks the tape iteratively (no recursion, so length-16k recurrences are
fine) and accumulates cotangents. Primitives cover exactly what the model
needs: broadcast arithmetic, matmul, reductions, slicing/concat, gated
activations, embedding lookup, and causal depthwise convolution.
"""

from __future__ import annotations

import numpy as np

from chela import conv as _conv
from chela import numerics as _num


class Var:
    __slots__ = ("value", "parents")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value)
        self.parents = parents  # tuple of (Var, vjp_closure)

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def grad(out: Var, leaves: list[Var], cotangent: np.ndarray | None = None) -> list[np.ndarray]:
    """Cotangents of ``out`` with respect to each leaf (zeros if unused)."""
    if cotangent is None:
        cotangent = np.ones_like(out.value)

    # Iterative topological order over the reachable tape.
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(out): np.asarray(cotangent, dtype=out.value.dtype)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in node.parents:
            pg = vjp(g)
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return [grads.get(id(leaf), np.zeros_like(leaf.value)) for leaf in leaves]


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value + b.value
    return Var(out, (
        (a, lambda g, s=a.value.shape: _unbroadcast(g, s)),
        (b, lambda g, s=b.value.shape: _unbroadcast(g, s)),
    ))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value * b.value
    return Var(out, (
        (a, lambda g, bv=b.value, s=a.value.shape: _unbroadcast(g * bv, s)),
        (b, lambda g, av=a.value, s=b.value.shape: _unbroadcast(g * av, s)),
    ))


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value @ b.value

    def vjp_a(g, bv=b.value, s=a.value.shape):
        return _unbroadcast(g @ np.swapaxes(bv, -1, -2), s)

    def vjp_b(g, av=a.value, s=b.value.shape):
        return _unbroadcast(np.swapaxes(av, -1, -2) @ g, s)

    return Var(out, ((a, vjp_a), (b, vjp_b)))


def power(a, p: float) -> Var:
    a = as_var(a)
    out = a.value ** p
    return Var(out, ((a, lambda g, av=a.value: g * p * av ** (p - 1.0)),))


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)
    return Var(out, ((a, lambda g, o=out: g * o),))


def log(a) -> Var:
    a = as_var(a)
    return Var(np.log(a.value), ((a, lambda g, av=a.value: g / av),))


def sigmoid(a) -> Var:
    a = as_var(a)
    s = _num.sigmoid(a.value)
    return Var(s, ((a, lambda g, s=s: g * s * (1.0 - s)),))


def silu(a) -> Var:
    a = as_var(a)
    s = _num.sigmoid(a.value)
    out = a.value * s
    # d/dx x*s(x) = s + x s (1-s)
    return Var(out, ((a, lambda g, s=s, av=a.value: g * (s + av * s * (1.0 - s))),))


def vsum(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g, shape=a.value.shape):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return np.broadcast_to(gg, shape).copy()

    return Var(out, ((a, vjp),))


def vmean(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(vsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def cumsum(a, axis: int) -> Var:
    """Inclusive running sum along one axis; the VJP is the reversed cumsum."""
    a = as_var(a)
    out = np.cumsum(a.value, axis=axis)

    def vjp(g):
        return np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)

    return Var(out, ((a, vjp),))


def reshape(a, shape) -> Var:
    a = as_var(a)
    return Var(a.value.reshape(shape),
               ((a, lambda g, s=a.value.shape: g.reshape(s)),))


def swapaxes(a, ax1: int, ax2: int) -> Var:
    a = as_var(a)
    return Var(np.swapaxes(a.value, ax1, ax2),
               ((a, lambda g: np.swapaxes(g, ax1, ax2)),))


def getitem(a, idx) -> Var:
    a = as_var(a)
    out = a.value[idx]

    def vjp(g, shape=a.value.shape, dtype=a.value.dtype):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return full

    return Var(out, ((a, vjp),))


def concat(parts: list, axis: int = 0) -> Var:
    parts = [as_var(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)
    parents = []
    for i, p in enumerate(parts):
        def vjp(g, lo=offsets[i], hi=offsets[i + 1]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]
        parents.append((p, vjp))
    return Var(out, tuple(parents))


def embedding(table, ids: np.ndarray) -> Var:
    """Row lookup table[ids]; backward scatter-adds into the table."""
    table = as_var(table)
    ids = np.asarray(ids)
    out = table.value[ids]

    def vjp(g, shape=table.value.shape, dtype=table.value.dtype):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, ids, g)
        return full

    return Var(out, ((table, vjp),))


def gather_last(a, idx: np.ndarray) -> Var:
    """Pick one entry along the last axis per leading position."""
    a = as_var(a)
    idx = np.asarray(idx)
    out = np.take_along_axis(a.value, idx[..., None], axis=-1)[..., 0]

    def vjp(g, shape=a.value.shape, dtype=a.value.dtype):
        full = np.zeros(shape, dtype=dtype)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        return full

    return Var(out, ((a, vjp),))


def rms_norm(x, gain, eps: float = 1e-6) -> Var:
    x, gain = as_var(x), as_var(gain)
    ms = vmean(mul(x, x), axis=-1, keepdims=True)
    inv = power(add(ms, eps), -0.5)
    return mul(mul(x, inv), gain)


def layer_norm(x, gain, bias, eps: float = 1e-6) -> Var:
    x = as_var(x)
    mu = vmean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = vmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), gain), bias)


def causal_depthwise_conv(x, kernels) -> Var:
    """Per-channel causal convolution: x [B,L,C], kernels [C,k] -> [B,L,C].

    Forward runs through the FFT fast path; both VJPs are FFT correlations.
    """
    x, kernels = as_var(x), as_var(kernels)
    out = _conv.depthwise_conv(kernels.value, x.value)
    k = kernels.value.shape[-1]

    def vjp_x(g, kv=kernels.value):
        # dx[t] = sum_j k_j g[t+j]: causal conv of the time-reversed cotangent.
        gt = np.moveaxis(g, -1, -2)[..., ::-1]
        dx = _conv.causal_conv_auto(kv[:, :g.shape[-2]], gt)[..., ::-1]
        return np.moveaxis(dx, -2, -1)

    def vjp_k(g, xv=x.value):
        # dk[c,j] = sum_{b,t} x[b,t-j,c] g[b,t,c]: correlation at lags 0..k-1.
        gt = np.moveaxis(g, -1, -2)      # [B, C, L]
        xt = np.moveaxis(xv, -1, -2)
        L = gt.shape[-1]
        lags = min(k, L)
        if k <= _conv.SMALL_KERNEL_MAX:
            dk = np.stack([(gt[..., j:] * xt[..., :L - j]).sum(
                axis=tuple(range(gt.ndim - 2)) + (-1,)) for j in range(lags)],
                axis=-1)
        else:
            corr = _conv.causal_corr_fft(xt, gt, lags)
            dk = corr.sum(axis=tuple(range(corr.ndim - 2)))
        if dk.shape[-1] < k:
            dk = np.pad(dk, [(0, 0), (0, k - dk.shape[-1])])
        return dk

    return Var(out, ((x, vjp_x), (kernels, vjp_k)))
