"""Fast oracle suite behind the ``verify`` CLI verb.

Runs the cross-implementation equivalence checks (attention three-way,
FFT/direct convolution, branch fusion, SSM convolution vs. recurrence) and
the gradient checks, reporting one pass/fail line per check.
"""

from __future__ import annotations

import numpy as np

from chela import attention as attn
from chela import autodiff as ad
from chela import conv as _conv
from chela import ssm as _ssm
from chela.layer import ModelConfig, init_chela_params, model_forward
from chela.numerics import vjp_check
from chela.rng import Rng


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.max(np.abs(b)), 1e-30)
    return float(np.max(np.abs(a - b)) / denom)


def run_checks(trials: int = 20, seed: int = 0) -> list[tuple[str, bool, str]]:
    results = []

    def record(name, err, tol):
        results.append((name, err <= tol, f"err={err:.3e} tol={tol:.0e}"))

    rng = Rng(seed)

    # Attention: chunked == recurrent == dense-masked.
    worst = 0.0
    for i in range(trials):
        L = int(rng.integers((), 4, 129)[()])
        d = int(rng.integers((), 2, 33)[()])
        C = [1, 7, 64, L][i % 4]
        q, k, v = (rng.normal((1, L, d)) for _ in range(3))
        r = attn.linear_attention_recurrent(q, k, v)
        worst = max(worst,
                    _rel(attn.linear_attention_chunked(q, k, v, C), r),
                    _rel(attn.dense_masked_linear_attention(q, k, v), r))
    record("attention three-way equivalence", worst, 1e-9)

    # Convolution: FFT == direct across kernel sizes.
    worst = 0.0
    for L in (16, 64, 256, 1024):
        for kk in (1, 3, 9, L):
            kern = rng.normal(kk)
            x = rng.normal(L)
            worst = max(worst, _rel(_conv.causal_conv_fft(kern, x),
                                    _conv.causal_conv_direct(kern, x)))
    record("conv FFT/direct equivalence", worst, 1e-10)

    # Fusion: branch path == fused single-kernel path.
    worst = 0.0
    for _ in range(trials):
        ch, L = 3, 64
        p = _conv.init_short_long(rng, ch, L)
        x = rng.normal((2, L, ch))
        fused = _conv.fuse_short_branches(p.bank)
        worst = max(worst, _rel(_conv.short_long_forward_fused(fused, p.long_kernel, x),
                                _conv.short_long_forward(p, x)))
    record("short-branch fusion exactness", worst, 1e-9)

    # SSM: convolutional forward == recurrent scan.
    worst = 0.0
    for d_s in (4, 16, 32):
        disc = _ssm.bilinear_discretize(_ssm.hippo_s4_init(d_s, rng, delta=0.01))
        u = rng.normal(512)
        worst = max(worst, _rel(_ssm.ssm_forward(disc, u), _ssm.recurrent_scan(disc, u)))
    record("SSM conv/recurrence equivalence", worst, 1e-8)

    rho = _ssm.spectral_radius(
        _ssm.bilinear_discretize(_ssm.hippo_s4_init(16, rng, delta=0.1)).A_bar)
    results.append(("SSM spectral radius < 1", rho < 1.0, f"rho={rho:.6f}"))

    # Gradient checks.
    record("vjp: silu", vjp_check(lambda x: ad.silu(x), [rng.normal(16)]), 1e-7)
    record("vjp: rms_norm",
           vjp_check(lambda x, g: ad.rms_norm(x, g), [rng.normal((4, 8)), rng.normal(8)]),
           1e-6)
    record("vjp: depthwise conv",
           vjp_check(lambda x, k: ad.causal_depthwise_conv(x, k),
                     [rng.normal((2, 16, 3)), rng.normal((3, 5))]), 1e-6)
    cfg = ModelConfig(depth=2, d_model=8, max_len=16, vocab_size=8, chunk=4, seed=3)
    params = init_chela_params(cfg)
    names = sorted(params)
    toks = rng.integers((1, 16), 0, 8)

    def fwd(*plist):
        return model_forward(cfg, dict(zip(names, plist)), toks)

    record("vjp: 2-block model", vjp_check(fwd, [params[n] for n in names]), 1e-4)
    return results
