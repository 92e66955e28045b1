"""Attention engine: softmax baseline, linear attention in three equivalent
forms (non-causal closed form, causal recurrence, chunked divide-and-conquer),
plus an autodiff-traced chunked form for training.

Inputs are [batch, length, dim]; the causal linear forms are normalized per
token by an RMS norm over the feature dimension (learnable gain, default 1).
"""

from __future__ import annotations

import numpy as np

from chela import autodiff as ad
from chela.numerics import rms_norm

DEFAULT_EPS = 1e-6


def _check_inputs(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> None:
    if not (q.shape == k.shape == v.shape) or q.ndim != 3:
        raise ValueError(f"Q/K/V must share a [B,L,d] shape, got "
                         f"{q.shape}, {k.shape}, {v.shape}")


def softmax_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                      causal: bool = False) -> np.ndarray:
    """Row-softmax attention over scores / sqrt(d), stabilized by row-max
    subtraction; causal masks strictly-upper scores to -inf."""
    _check_inputs(q, k, v)
    L, d = q.shape[1], q.shape[2]
    scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(d)
    if causal:
        mask = np.triu(np.ones((L, L), dtype=bool), k=1)
        scores = np.where(mask, -np.inf, scores)
    scores = scores - scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w = w / w.sum(axis=-1, keepdims=True)
    return w @ v


def linear_attention_noncausal(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                               gain: np.ndarray | None = None,
                               eps: float = DEFAULT_EPS) -> np.ndarray:
    """Right-product form: per-token Q_t (K^T V), then RMS-normalized."""
    _check_inputs(q, k, v)
    if gain is None:
        gain = np.ones(q.shape[-1], dtype=q.dtype)
    kv = np.swapaxes(k, -1, -2) @ v          # [B, d, d]
    return rms_norm(q @ kv, gain, eps)


def linear_attention_recurrent(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                               gain: np.ndarray | None = None,
                               eps: float = DEFAULT_EPS) -> np.ndarray:
    """Sequential causal form (ground truth): S += K_t^T V_t, O_t = Q_t S."""
    _check_inputs(q, k, v)
    B, L, d = q.shape
    if gain is None:
        gain = np.ones(d, dtype=q.dtype)
    out = np.empty_like(v)
    S = np.zeros((B, d, d), dtype=q.dtype)
    for t in range(L):
        S = S + k[:, t, :, None] * v[:, t, None, :]
        out[:, t] = np.einsum("bd,bde->be", q[:, t], S)
    return rms_norm(out, gain, eps)


def linear_attention_chunked(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                             chunk: int,
                             gain: np.ndarray | None = None,
                             eps: float = DEFAULT_EPS) -> np.ndarray:
    """Tiled causal form: inter-chunk contributions flow through a running
    d x d state (right product); intra-chunk uses the masked dense product
    (left product). Exactly equal to the recurrent form.
    """
    _check_inputs(q, k, v)
    if chunk < 1:
        raise ValueError(f"chunk size must be >= 1, got {chunk}")
    B, L, d = q.shape
    if gain is None:
        gain = np.ones(d, dtype=q.dtype)
    out = np.empty_like(v)
    S = np.zeros((B, d, d), dtype=q.dtype)
    for start in range(0, L, chunk):
        end = min(start + chunk, L)
        qc, kc, vc = q[:, start:end], k[:, start:end], v[:, start:end]
        tri = np.tril(np.ones((end - start, end - start), dtype=q.dtype))
        inter = qc @ S
        intra = ((qc @ np.swapaxes(kc, -1, -2)) * tri) @ vc
        out[:, start:end] = inter + intra
        S = S + np.swapaxes(kc, -1, -2) @ vc
    return rms_norm(out, gain, eps)


def dense_masked_linear_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                                  gain: np.ndarray | None = None,
                                  eps: float = DEFAULT_EPS) -> np.ndarray:
    """Left-product reference: Norm((Q K^T o lower-tri) V). O(L^2); used as
    the dense oracle for the causal forms."""
    _check_inputs(q, k, v)
    if gain is None:
        gain = np.ones(q.shape[-1], dtype=q.dtype)
    L = q.shape[1]
    tri = np.tril(np.ones((L, L), dtype=q.dtype))
    return rms_norm(((q @ np.swapaxes(k, -1, -2)) * tri) @ v, gain, eps)


def chunked_linear_attention_v(q: ad.Var, k: ad.Var, v: ad.Var,
                               chunk: int) -> ad.Var:
    """Autodiff-traced chunked causal linear attention (pre-normalization).

    Same arithmetic as the ndarray version, but all full chunks run through
    batched whole-array ops: per-chunk states come from a cumulative sum of
    the K^T V chunk products (which accumulates in the same sequential order
    as the explicit chain), so neither pass loops over the sequence.
    """
    B, L, d = q.value.shape
    if chunk < 1:
        raise ValueError(f"chunk size must be >= 1, got {chunk}")
    C = min(chunk, L)
    n = L // C
    main = n * C
    dtype = q.value.dtype

    tri = np.tril(np.ones((C, C), dtype=dtype))
    qr = ad.reshape(q[:, :main], (B, n, C, d))
    kr = ad.reshape(k[:, :main], (B, n, C, d))
    vr = ad.reshape(v[:, :main], (B, n, C, d))
    kt = ad.swapaxes(kr, -1, -2)
    kv = kt @ vr                                 # [B, n, d, d]
    s_inc = ad.cumsum(kv, axis=1)                # state after each chunk
    zero = ad.Var(np.zeros((B, 1, d, d), dtype=dtype))
    s_exc = ad.concat([zero, s_inc[:, :n - 1]], axis=1) if n > 1 else zero
    inter = qr @ s_exc
    intra = ad.mul(qr @ kt, tri) @ vr
    out = ad.reshape(inter + intra, (B, main, d))
    if main == L:
        return out

    # remainder chunk (L not divisible by C)
    r = L - main
    qt, ktail, vtail = q[:, main:], k[:, main:], v[:, main:]
    tri_t = np.tril(np.ones((r, r), dtype=dtype))
    inter_t = qt @ s_inc[:, n - 1]
    intra_t = ad.mul(qt @ ad.swapaxes(ktail, -1, -2), tri_t) @ vtail
    return ad.concat([out, inter_t + intra_t], axis=1)


def recurrent_linear_attention_v(q: ad.Var, k: ad.Var, v: ad.Var) -> ad.Var:
    """Autodiff-traced token-by-token causal form (the slow baseline)."""
    B, L, d = q.value.shape
    S = ad.Var(np.zeros((B, d, d), dtype=q.value.dtype))
    outs = []
    for t in range(L):
        kt = ad.swapaxes(k[:, t:t + 1], -1, -2)
        S = S + kt @ v[:, t:t + 1]
        outs.append(q[:, t:t + 1] @ S)
    return ad.concat(outs, axis=1)


def chunked_state_bytes(d: int, chunk: int, itemsize: int = 8) -> int:
    """Auxiliary memory of the chunked form per batch item, independent of L:
    the running d x d state, the d x d chunk update, the C x C score block and
    mask, and the four C x d chunk tiles."""
    return itemsize * (2 * d * d + 2 * chunk * chunk + 4 * chunk * d)
