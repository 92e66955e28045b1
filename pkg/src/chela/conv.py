"""Causal depthwise convolutions: direct-summation oracle, FFT fast path,
the short-long module (parallel short kernels -> SiLU -> long kernel), and
exact fusion of the short branches into a single kernel.

Layout convention: sequences are [batch, length, channels]; kernel banks are
[channels, taps]. Convolutions are causal (left-padded, no lookahead).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from chela.numerics import fft_real_rows, ifft_real_rows, next_pow2, silu
from chela.rng import Rng


def short_kernel_size(L: int) -> int:
    """Length-dependent short kernel size: 2*log10(L) + 1, rounded up to the
    next odd integer, never below 3."""
    if L < 1:
        raise ValueError(f"sequence length must be >= 1, got {L}")
    k = math.ceil(2.0 * math.log10(L) + 1.0)
    if k % 2 == 0:
        k += 1
    return max(k, 3)


def causal_conv_direct(kernel: np.ndarray, x: np.ndarray) -> np.ndarray:
    """O(L*k) causal convolution by explicit shifted accumulation (oracle).

    y_t = sum_{j<=min(t,k-1)} kernel_j * x_{t-j}. Kernels longer than the
    sequence are truncated.
    """
    kernel = np.asarray(kernel, dtype=float)
    x = np.asarray(x, dtype=float)
    L = x.shape[-1]
    k = min(kernel.shape[-1], L)
    y = np.zeros_like(x)
    for j in range(k):
        tap = kernel[..., j:j + 1]
        if j == 0:
            y += tap * x
        else:
            y[..., j:] += tap * x[..., :L - j]
    return y


def causal_conv_fft(kernel: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Causal convolution via spectral multiplication.

    Both operands are zero-padded to a power of two >= L + k - 1 so circular
    wrap-around never reaches the first L outputs. Broadcasts over leading
    axes (kernel [..., k] against x [..., L] with compatible leading dims).
    """
    kernel = np.asarray(kernel)
    x = np.asarray(x)
    L = x.shape[-1]
    k = min(kernel.shape[-1], L)
    kernel = kernel[..., :k]
    n = next_pow2(L + k - 1)
    xf = fft_real_rows(_pad_last(x, n))
    kf = fft_real_rows(_pad_last(kernel, n))
    y = ifft_real_rows(xf * kf)[..., :L]
    return y.astype(x.dtype) if x.dtype.kind == "f" else y


def causal_corr_fft(kernel: np.ndarray, g: np.ndarray, lags: int) -> np.ndarray:
    """Cross-correlation at non-negative lags: out_j = sum_t kernel_t g_{t+j}.

    Used by convolution VJPs; ``lags`` bounds the returned tap axis.
    """
    kernel = np.asarray(kernel)
    g = np.asarray(g)
    n = next_pow2(g.shape[-1] + kernel.shape[-1])
    gf = fft_real_rows(_pad_last(g, n))
    kf = fft_real_rows(_pad_last(kernel, n))
    out = ifft_real_rows(gf * np.conj(kf))[..., :lags]
    return out


def _pad_last(a: np.ndarray, n: int) -> np.ndarray:
    pad = n - a.shape[-1]
    if pad <= 0:
        return a
    width = [(0, 0)] * (a.ndim - 1) + [(0, pad)]
    return np.pad(a, width)


# below this tap count a shifted-accumulation loop beats padding out to an FFT
SMALL_KERNEL_MAX = 16


def causal_conv_auto(kernel: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Causal convolution over the last axis, picking the direct path for
    short kernels and the spectral path otherwise. Preserves dtype."""
    kernel = np.asarray(kernel)
    x = np.asarray(x)
    if kernel.shape[-1] > SMALL_KERNEL_MAX:
        return causal_conv_fft(kernel, x)
    L = x.shape[-1]
    k = min(kernel.shape[-1], L)
    y = kernel[..., 0:1] * x
    for j in range(1, k):
        y[..., j:] += kernel[..., j:j + 1] * x[..., :L - j]
    return y


def depthwise_conv(kernels: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-channel causal convolution: kernels [C,k], x [B,L,C] -> [B,L,C]."""
    if kernels.shape[0] != x.shape[-1]:
        raise ValueError(f"channel mismatch: kernels {kernels.shape[0]} vs x {x.shape[-1]}")
    xt = np.moveaxis(x, -1, -2)           # [B, C, L]
    yt = causal_conv_auto(kernels, xt)    # broadcast over batch
    return np.moveaxis(yt, -2, -1)


@dataclass
class ShortConvBank:
    """Parallel short branches: fixed size-3 kernel, length-dependent kernel,
    and an optional identity skip, summed before the activation."""

    k3: np.ndarray          # [C, 3]
    kvar: np.ndarray        # [C, short_kernel_size(L)]
    include_identity: bool = True

    def __post_init__(self):
        if self.k3.shape[-1] != 3:
            raise ValueError("fixed short kernel must have 3 taps")
        if self.kvar.shape[-1] % 2 == 0:
            raise ValueError("variable short kernel length must be odd")
        if self.k3.shape[0] != self.kvar.shape[0]:
            raise ValueError("short kernels must share the channel count")

    @property
    def channels(self) -> int:
        return self.k3.shape[0]


@dataclass
class FusedShortKernel:
    """Single kernel equivalent to a ShortConvBank, for the inference path."""

    kernel: np.ndarray      # [C, k]


@dataclass
class ShortLongConvParams:
    bank: ShortConvBank
    long_kernel: np.ndarray  # [C, L_max]

    def __post_init__(self):
        if self.long_kernel.shape[0] != self.bank.channels:
            raise ValueError("long kernel channel count must match the bank")

    @property
    def max_len(self) -> int:
        return self.long_kernel.shape[-1]


def short_branch_forward(bank: ShortConvBank, x: np.ndarray) -> np.ndarray:
    """Sum of the parallel branch outputs, depthwise per channel."""
    if x.shape[-1] != bank.channels:
        raise ValueError(f"x has {x.shape[-1]} channels, bank has {bank.channels}")
    y = depthwise_conv(bank.k3, x) + depthwise_conv(bank.kvar, x)
    if bank.include_identity:
        y = y + x
    return y


def fuse_short_branches(bank: ShortConvBank) -> FusedShortKernel:
    """Collapse the parallel short branches into one kernel.

    Exact by linearity of convolution: taps add, and the identity skip is a
    unit impulse at lag zero.
    """
    fused = np.array(bank.kvar, dtype=float, copy=True)
    fused[:, :3] += bank.k3
    if bank.include_identity:
        fused[:, 0] += 1.0
    return FusedShortKernel(kernel=fused)


def short_long_forward(p: ShortLongConvParams, x: np.ndarray) -> np.ndarray:
    """Training path: long_conv(silu(short_branches(x)))."""
    L = x.shape[-2]
    if L > p.max_len:
        raise ValueError(f"sequence length {L} exceeds configured maximum {p.max_len}")
    h = silu(short_branch_forward(p.bank, x))
    return depthwise_conv(p.long_kernel[:, :L], h)


def short_long_forward_fused(fused: FusedShortKernel, long_kernel: np.ndarray,
                             x: np.ndarray) -> np.ndarray:
    """Inference path: one fused short kernel in place of the branch sum."""
    L = x.shape[-2]
    if L > long_kernel.shape[-1]:
        raise ValueError(f"sequence length {L} exceeds configured maximum "
                         f"{long_kernel.shape[-1]}")
    h = silu(depthwise_conv(fused.kernel, x))
    return depthwise_conv(long_kernel[:, :L], h)


def init_short_long(rng: Rng, channels: int, max_len: int,
                    include_identity: bool = True,
                    decay_envelope: bool = True) -> ShortLongConvParams:
    """Random initialization; the long kernel gets std 1/L and an exponential
    decay envelope applied once at init (not a training-time regularizer)."""
    kv = short_kernel_size(max_len)
    k3 = rng.normal((channels, 3), std=0.5 / 3)
    kvar = rng.normal((channels, kv), std=0.5 / kv)
    long_kernel = rng.normal((channels, max_len), std=1.0 / max_len)
    if decay_envelope:
        long_kernel = long_kernel * np.exp(-0.01 * np.arange(max_len))
    return ShortLongConvParams(
        bank=ShortConvBank(k3=k3, kvar=kvar, include_identity=include_identity),
        long_kernel=long_kernel,
    )
