"""Runtime/memory benchmarks across sequence lengths and scaling-exponent fits.

Each op runs forward and backward passes on random float32 inputs; timing
uses a monotonic clock, the first run is discarded, and medians over the warm
repeats are reported. Input generation is excluded from timing.
"""

from __future__ import annotations

import gc
import math
import statistics
import time
from dataclasses import dataclass

import numpy as np

from chela import attention as attn
from chela import autodiff as ad
from chela import conv as _conv
from chela.numerics import next_pow2, rms_norm
from chela.rng import Rng

BENCH_OPS = ("softmax", "linear_noncausal", "linear_recurrent", "linear_chunked",
             "fftconv", "directconv", "shortlong")

DEFAULT_SOFTMAX_SCORE_BUDGET = 2 ** 28  # max L*L entries before refusing


class BenchRefusedError(RuntimeError):
    pass


@dataclass
class BenchRow:
    op_name: str
    L: int
    d: int
    chunk: int
    repeats: int
    forward_ms: float
    backward_ms: float
    state_bytes: int


@dataclass
class BenchSpec:
    ops: list[str]
    lengths: list[int]
    d: int = 64
    chunk: int = 64
    repeats: int = 5
    kernel: int = 64                 # directconv tap count
    seed: int = 0
    softmax_budget: int = DEFAULT_SOFTMAX_SCORE_BUDGET


def softmax_attention_blocked(q, k, v, block: int = 1024):
    """Causal softmax attention, row-blocked so memory stays at block x L."""
    L, d = q.shape
    out = np.empty_like(v)
    scale = 1.0 / math.sqrt(d)
    cols = np.arange(L)
    for r0 in range(0, L, block):
        r1 = min(r0 + block, L)
        s = (q[r0:r1] @ k.T) * scale
        s[cols[None, :] > np.arange(r0, r1)[:, None]] = -np.inf
        s -= s.max(axis=-1, keepdims=True)
        p = np.exp(s)
        p /= p.sum(axis=-1, keepdims=True)
        out[r0:r1] = p @ v
    return out


def softmax_attention_blocked_backward(q, k, v, gy, block: int = 1024):
    """Manual VJP of blocked causal softmax attention (recomputes the rows)."""
    L, d = q.shape
    scale = 1.0 / math.sqrt(d)
    dq = np.empty_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    cols = np.arange(L)
    for r0 in range(0, L, block):
        r1 = min(r0 + block, L)
        s = (q[r0:r1] @ k.T) * scale
        s[cols[None, :] > np.arange(r0, r1)[:, None]] = -np.inf
        s -= s.max(axis=-1, keepdims=True)
        p = np.exp(s)
        p /= p.sum(axis=-1, keepdims=True)
        g = gy[r0:r1]
        dv += p.T @ g
        dp = g @ v.T
        ds = p * (dp - np.sum(dp * p, axis=-1, keepdims=True))
        dq[r0:r1] = ds @ k * scale
        dk += ds.T @ q[r0:r1] * scale
    return dq, dk, dv


def _op_harness(op: str, L: int, spec: BenchSpec):
    """Returns (forward, backward, state_bytes); forward returns a context the
    backward closure consumes."""
    rng = Rng(spec.seed + L)
    d, C = spec.d, spec.chunk
    f32 = lambda a: a.astype(np.float32)

    if op == "softmax":
        if L * L > spec.softmax_budget:
            raise BenchRefusedError(
                f"softmax benchmark refused: L*L = {L * L} exceeds the score "
                f"budget {spec.softmax_budget}; raise --softmax-budget to override")
        q, k, v = (f32(rng.normal((L, d))) for _ in range(3))
        gy = f32(rng.normal((L, d)))
        block = min(L, 1024)
        fwd = lambda: softmax_attention_blocked(q, k, v, block)
        bwd = lambda _ctx: softmax_attention_blocked_backward(q, k, v, gy, block)
        state = 3 * min(L, block) * L * 4
        return fwd, bwd, state

    if op in ("linear_noncausal", "linear_recurrent", "linear_chunked"):
        q, k, v = (ad.Var(f32(rng.normal((1, L, d)))) for _ in range(3))
        gy = f32(rng.normal((1, L, d)))
        gain = ad.Var(np.ones(d, dtype=np.float32))

        def fwd():
            if op == "linear_noncausal":
                kv = ad.swapaxes(k, -1, -2) @ v
                o = ad.rms_norm(q @ kv, gain)
            elif op == "linear_recurrent":
                o = ad.rms_norm(attn.recurrent_linear_attention_v(q, k, v), gain)
            else:
                o = ad.rms_norm(attn.chunked_linear_attention_v(q, k, v, C), gain)
            return o

        bwd = lambda o: ad.grad(o, [q, k, v], gy)
        if op == "linear_chunked":
            state = attn.chunked_state_bytes(d, C, 4)
        elif op == "linear_recurrent":
            state = (d * d + 2 * d) * 4
        else:
            state = (d * d + d) * 4
        return fwd, bwd, state

    if op == "fftconv":
        kern = ad.Var(f32(rng.normal((d, L), std=1.0 / L)))
        x = ad.Var(f32(rng.normal((1, L, d))))
        gy = f32(rng.normal((1, L, d)))
        fwd = lambda: ad.causal_depthwise_conv(x, kern)
        bwd = lambda o: ad.grad(o, [x, kern], gy)
        return fwd, bwd, 2 * next_pow2(2 * L) * 8 * d

    if op == "directconv":
        kk = min(spec.kernel, L)
        kern = f32(rng.normal((d, kk)))
        x = f32(rng.normal((d, L)))
        gy = f32(rng.normal((d, L)))

        def bwd(_y):
            dx = _conv.causal_conv_direct(kern, gy[:, ::-1])[:, ::-1]
            dk = np.stack([(gy[:, j:] * x[:, :L - j]).sum(axis=-1) for j in range(kk)], axis=-1)
            return dx, dk

        fwd = lambda: _conv.causal_conv_direct(kern, x)
        return fwd, bwd, kk * d * 4

    if op == "shortlong":
        kv = _conv.short_kernel_size(L)
        k3 = ad.Var(f32(rng.normal((d, 3))))
        kvar = ad.Var(f32(rng.normal((d, kv))))
        long = ad.Var(f32(rng.normal((d, L), std=1.0 / L)))
        x = ad.Var(f32(rng.normal((1, L, d))))
        gy = f32(rng.normal((1, L, d)))

        def fwd():
            h = ad.causal_depthwise_conv(x, k3) + ad.causal_depthwise_conv(x, kvar) + x
            return ad.causal_depthwise_conv(ad.silu(h), long)

        bwd = lambda o: ad.grad(o, [x, k3, kvar, long], gy)
        return fwd, bwd, 2 * next_pow2(2 * L) * 8 * d

    raise ValueError(f"unknown bench op {op!r}; choose from {BENCH_OPS}")


def bench_run(spec: BenchSpec) -> list[BenchRow]:
    if spec.repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {spec.repeats}")
    rows = []
    gc_was_enabled = gc.isenabled()
    gc.disable()  # collection pauses scale with live heap, not with L,
    try:          # and would otherwise flatten the fitted exponents
        for op in spec.ops:
            if op not in BENCH_OPS:
                raise ValueError(f"unknown bench op {op!r}; choose from {BENCH_OPS}")
            for L in spec.lengths:
                fwd, bwd, state = _op_harness(op, L, spec)
                f_times, b_times = [], []
                for rep in range(spec.repeats + 1):  # first run warms caches, discarded
                    t0 = time.perf_counter()
                    ctx = fwd()
                    t1 = time.perf_counter()
                    bwd(ctx)
                    t2 = time.perf_counter()
                    if rep > 0:
                        f_times.append((t1 - t0) * 1e3)
                        b_times.append((t2 - t1) * 1e3)
                rows.append(BenchRow(op_name=op, L=L, d=spec.d, chunk=spec.chunk,
                                     repeats=spec.repeats,
                                     forward_ms=statistics.median(f_times),
                                     backward_ms=statistics.median(b_times),
                                     state_bytes=state))
                gc.collect()
    finally:
        if gc_was_enabled:
            gc.enable()
    return rows


def fit_scaling_exponent(rows: list[BenchRow]) -> float:
    """OLS slope of ln(forward+backward ms) against ln(L)."""
    if len({r.L for r in rows}) < 3:
        raise ValueError("need at least 3 distinct lengths to fit an exponent")
    x = np.log([r.L for r in rows])
    y = np.log([r.forward_ms + r.backward_ms for r in rows])
    x = x - x.mean()
    return float(np.sum(x * (y - y.mean())) / np.sum(x * x))


def emit_csv(rows: list[BenchRow], path: str) -> None:
    with open(path, "w") as fh:
        fh.write("op,length,dim,chunk,forward_ms,backward_ms,state_bytes\n")
        for r in rows:
            fh.write(f"{r.op_name},{r.L},{r.d},{r.chunk},"
                     f"{r.forward_ms:.6f},{r.backward_ms:.6f},{r.state_bytes}\n")


def parse_csv(path: str) -> list[BenchRow]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "op,length,dim,chunk,forward_ms,backward_ms,state_bytes":
            raise ValueError(f"unexpected benchmark CSV header: {header}")
        for line in fh:
            op, L, d, chunk, fms, bms, sb = line.strip().split(",")
            rows.append(BenchRow(op_name=op, L=int(L), d=int(d), chunk=int(chunk),
                                 repeats=0, forward_ms=float(fms),
                                 backward_ms=float(bms), state_bytes=int(sb)))
    return rows
