"""Reference state-space stack: structured-memory initialization, bilinear
discretization, kernel materialization, and the sequential recurrence that
serves as the ground-truth oracle for convolutional evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from chela.conv import causal_conv_fft
from chela.rng import Rng


@dataclass
class ContinuousSsm:
    """x'(t) = A x(t) + B u(t), y(t) = C x(t), with step size delta."""

    A: np.ndarray      # [d_s, d_s]
    B: np.ndarray      # [d_s]
    C: np.ndarray      # [d_s]
    delta: float

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError(f"step size must be positive, got {self.delta}")


@dataclass
class DiscreteSsm:
    A_bar: np.ndarray  # [d_s, d_s]
    B_bar: np.ndarray  # [d_s]
    C_bar: np.ndarray  # [d_s]

    @property
    def state_dim(self) -> int:
        return self.B_bar.shape[0]


def hippo_s4_init(d_s: int, rng: Rng, delta: float = 0.01) -> ContinuousSsm:
    """Structured history-memorizing initialization.

    A is the three-case lower-triangular-after-correction matrix minus the
    rank-one term P P^T; B_i = sqrt(2i+1); C is drawn standard normal.
    """
    if d_s < 1:
        raise ValueError(f"state dimension must be >= 1, got {d_s}")
    n = np.arange(d_s, dtype=float)
    p = np.sqrt(n + 0.5)
    base = np.zeros((d_s, d_s))
    i, j = np.meshgrid(n, n, indexing="ij")
    lower = i > j
    upper = i < j
    base[lower] = -(p[:, None] * p[None, :])[lower]
    base[upper] = +(p[:, None] * p[None, :])[upper]
    np.fill_diagonal(base, -0.5)
    A = base - np.outer(p, p)
    B = np.sqrt(2.0 * n + 1.0)
    C = rng.normal((d_s,))
    return ContinuousSsm(A=A, B=B, C=C, delta=delta)


def bilinear_discretize(ssm: ContinuousSsm) -> DiscreteSsm:
    """Bilinear (Tustin) transform:

        A_bar = (I - d/2 A)^-1 (I + d/2 A),  B_bar = (I - d/2 A)^-1 d B.
    """
    d_s = ssm.B.shape[0]
    eye = np.eye(d_s)
    left = eye - 0.5 * ssm.delta * ssm.A
    cond = np.linalg.cond(left)
    if not np.isfinite(cond) or cond > 1e12:
        raise np.linalg.LinAlgError(
            f"(I - delta/2 A) is numerically singular (cond estimate {cond:.3g})")
    right = eye + 0.5 * ssm.delta * ssm.A
    A_bar = np.linalg.solve(left, right)
    B_bar = np.linalg.solve(left, ssm.delta * np.asarray(ssm.B, dtype=float))
    return DiscreteSsm(A_bar=A_bar, B_bar=B_bar, C_bar=np.asarray(ssm.C, dtype=float))


def materialize_kernel(d: DiscreteSsm, L: int) -> np.ndarray:
    """Impulse response (C A^t B for t < L) by iterated state propagation.

    Cost O(L * d_s^2); the matrix power is never formed explicitly.
    """
    if L < 1:
        raise ValueError(f"kernel length must be >= 1, got {L}")
    state = np.asarray(d.B_bar, dtype=float)
    out = np.empty(L)
    for t in range(L):
        out[t] = d.C_bar @ state
        if t + 1 < L:
            state = d.A_bar @ state
    return out


def recurrent_scan(d: DiscreteSsm, u: np.ndarray) -> np.ndarray:
    """Exact sequential recurrence x_k = A x_{k-1} + B u_k, y_k = C x_k.

    Starts from x_{-1} = 0; this is the oracle the convolutional forward is
    checked against.
    """
    u = np.asarray(u, dtype=float)
    x = np.zeros(d.state_dim)
    y = np.empty(u.shape[-1])
    for k in range(u.shape[-1]):
        x = d.A_bar @ x + d.B_bar * u[k]
        y[k] = d.C_bar @ x
    return y


def ssm_forward(d: DiscreteSsm, u: np.ndarray) -> np.ndarray:
    """Convolutional evaluation: materialize the kernel, then FFT-convolve."""
    u = np.asarray(u, dtype=float)
    kernel = materialize_kernel(d, u.shape[-1])
    return causal_conv_fft(kernel, u)


def spectral_radius(A: np.ndarray) -> float:
    """Largest |eigenvalue| of the state transition matrix."""
    return float(np.max(np.abs(np.linalg.eigvals(A))))
