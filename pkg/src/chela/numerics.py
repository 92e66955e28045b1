"""Numerical substrate: radix-2 FFT, activations, normalizations, and the
finite-difference gradient check used to validate every differentiable op.

All functions are pure and operate on numpy arrays. Correctness-critical
callers use float64; the benchmark path feeds float32 inputs and gets
complex64 FFTs.
"""

from __future__ import annotations

import numpy as np

from chela.rng import Rng

_rev_cache: dict[int, np.ndarray] = {}
_twiddle_cache: dict[tuple, np.ndarray] = {}


def _twiddles(size: int, ctype, sign: float) -> np.ndarray:
    key = (size, np.dtype(ctype), sign)
    w = _twiddle_cache.get(key)
    if w is None:
        half = size // 2
        w = np.exp(sign * 2j * np.pi * np.arange(half) / size).astype(ctype)
        _twiddle_cache[key] = w
    return w


def next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def _bit_reversal(n: int) -> np.ndarray:
    perm = _rev_cache.get(n)
    if perm is None:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        perm = np.zeros(n, dtype=np.intp)
        for _ in range(bits):
            perm = (perm << 1) | (idx & 1)
            idx >>= 1
        _rev_cache[n] = perm
    return perm


def fft(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Iterative radix-2 FFT along the last axis.

    Inputs whose length is not a power of two are zero-padded up to the next
    power of two; the returned transform has the padded length. Forward uses
    the e^{-2*pi*i/N} convention; inverse applies the 1/N scale.
    """
    x = np.asarray(x)
    L = x.shape[-1]
    if L == 0:
        raise ValueError("fft requires a non-empty input")
    ctype = np.complex64 if x.dtype in (np.float32, np.complex64) else np.complex128
    n = next_pow2(L)
    a = np.zeros(x.shape[:-1] + (n,), dtype=ctype)
    a[..., :L] = x
    if n == 1:
        return a
    a = a[..., _bit_reversal(n)]
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        w = _twiddles(size, ctype, sign)
        b = a.reshape(a.shape[:-1] + (n // size, size))
        t = b[..., half:] * w
        b[..., half:] = b[..., :half] - t
        b[..., :half] += t
        size *= 2
    if inverse:
        a = a / n
    return a


def ifft(x: np.ndarray) -> np.ndarray:
    return fft(x, inverse=True)


def fft_real_rows(x: np.ndarray) -> np.ndarray:
    """Forward FFT of a real array along the last axis, running pairs of rows
    through one complex transform (two-for-one packing).

    The pair (x1, x2) is transformed as Z = F[x1 + i*x2] and split by
    Hermitian symmetry: F[x1] = (Z + conj(Z[-k]))/2, F[x2] = (Z - conj(Z[-k]))/(2i).
    Exact up to rounding; falls back to the plain transform for a single row.
    """
    x = np.asarray(x)
    if x.dtype.kind == "c":
        return fft(x)
    shape = x.shape
    m = int(np.prod(shape[:-1])) if x.ndim > 1 else 1
    if m < 2:
        return fft(x)
    flat = x.reshape(m, shape[-1])
    odd = m % 2
    if odd:
        flat = np.concatenate([flat, np.zeros((1, shape[-1]), dtype=flat.dtype)])
    z = fft(flat[0::2] + 1j * flat[1::2])
    n = z.shape[-1]
    rev = (-np.arange(n)) % n
    zc = np.conj(z[:, rev])
    out = np.empty((flat.shape[0], n), dtype=z.dtype)
    out[0::2] = 0.5 * (z + zc)
    out[1::2] = -0.5j * (z - zc)
    if odd:
        out = out[:m]
    return out.reshape(shape[:-1] + (n,))


def ifft_real_rows(F: np.ndarray) -> np.ndarray:
    """Inverse FFT of spectra whose inverses are known to be real, packing
    pairs of rows into one complex transform; returns the real result."""
    F = np.asarray(F)
    shape = F.shape
    m = int(np.prod(shape[:-1])) if F.ndim > 1 else 1
    if m < 2:
        return ifft(F).real
    flat = F.reshape(m, shape[-1])
    odd = m % 2
    if odd:
        flat = np.concatenate([flat, np.zeros((1, shape[-1]), dtype=flat.dtype)])
    z = ifft(flat[0::2] + 1j * flat[1::2])
    rtype = np.float32 if z.dtype == np.complex64 else np.float64
    out = np.empty((flat.shape[0], z.shape[-1]), dtype=rtype)
    out[0::2] = z.real
    out[1::2] = z.imag
    if odd:
        out = out[:m]
    return out.reshape(shape[:-1] + (z.shape[-1],))


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function: exp(-|x|) never overflows."""
    x = np.asarray(x)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def activation(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "silu":
        return silu(np.asarray(x, dtype=float))
    if kind == "sigmoid":
        return sigmoid(np.asarray(x, dtype=float))
    raise ValueError(f"unknown activation {kind!r}")


def rms_norm(x: np.ndarray, gain: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Scale by the reciprocal root-mean-square over the last axis."""
    x = np.asarray(x)
    gain = np.asarray(gain)
    if x.shape[-1] != gain.shape[-1]:
        raise ValueError(f"feature dim {x.shape[-1]} != gain dim {gain.shape[-1]}")
    ms = np.mean(np.square(x), axis=-1, keepdims=True)
    return gain * x / np.sqrt(ms + eps)


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
               eps: float = 1e-6) -> np.ndarray:
    """Mean-subtracted, variance-scaled normalization with affine output."""
    x = np.asarray(x)
    gain = np.asarray(gain)
    bias = np.asarray(bias)
    if not (x.shape[-1] == gain.shape[-1] == bias.shape[-1]):
        raise ValueError("layer_norm: feature dims of x, gain, bias must match")
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.mean(np.square(x - mu), axis=-1, keepdims=True)
    return gain * (x - mu) / np.sqrt(var + eps) + bias


def require_finite(name: str, x: np.ndarray) -> np.ndarray:
    """Raise if NaN/Inf appears; non-finite values are an error state."""
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {name}")
    return x


def vjp_check(forward, inputs, step: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between the reverse-mode VJP and central differences.

    ``forward`` maps autodiff Vars to a single Var. The check contracts the
    Jacobian with a random cotangent and a random input direction, so one
    scalar comparison covers every parameter jointly:

        cot . (f(x + h u) - f(x - h u)) / (2 h)   vs   sum_i vjp_i(cot) . u_i
    """
    from chela import autodiff as ad

    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
    probe = Rng(seed)
    leaves = [ad.Var(x) for x in inputs]
    out = forward(*leaves)
    require_finite("vjp_check forward output", out.value)
    cot = probe.normal(out.value.shape)
    grads = ad.grad(out, leaves, cot)

    dirs = [probe.normal(x.shape) for x in inputs]
    scale = max(1.0, max(float(np.max(np.abs(x))) if x.size else 0.0 for x in inputs))
    h = step * scale

    def eval_at(sign):
        shifted = [ad.Var(x + sign * h * u) for x, u in zip(inputs, dirs)]
        return forward(*shifted).value

    fd = float(np.sum(cot * (eval_at(+1.0) - eval_at(-1.0)) / (2.0 * h)))
    an = float(sum(np.sum(g * u) for g, u in zip(grads, dirs)))
    return abs(fd - an) / max(1.0, abs(fd), abs(an))
