"""Deterministic counter-based PRNG (splitmix64) with uniform/normal transforms.

The stream depends only on the 64-bit seed, never on platform or numpy
version, so training runs and generated task batches are reproducible
bit-for-bit.
"""

from __future__ import annotations

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 output function on an array of uint64 counters."""
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Single-owner deterministic random stream.

    The state advances by a fixed increment per drawn word, so the sequence
    for a given seed is independent of how draws are batched.
    """

    def __init__(self, seed: int):
        self._state = seed & 0xFFFFFFFFFFFFFFFF

    @property
    def state(self) -> int:
        return self._state

    @state.setter
    def state(self, value: int) -> None:
        self._state = value & 0xFFFFFFFFFFFFFFFF

    def _next_words(self, n: int) -> np.ndarray:
        counters = np.uint64(self._state) + np.arange(1, n + 1, dtype=np.uint64) * _GAMMA
        self._state = (self._state + n * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
        return _mix64(counters)

    def _next_unit(self, n: int) -> np.ndarray:
        """n doubles in the open interval (0, 1), 53-bit resolution."""
        words = self._next_words(n)
        return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = _as_shape(shape)
        n = int(np.prod(shape)) if shape else 1
        u = self._next_unit(n)
        out = low + (high - low) * u
        return out.reshape(shape)

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        if std < 0:
            raise ValueError(f"normal std must be >= 0, got {std}")
        shape = _as_shape(shape)
        n = int(np.prod(shape)) if shape else 1
        # Box-Muller on pairs; draw an even count and truncate.
        m = n + (n & 1)
        u = self._next_unit(m).reshape(2, m // 2)
        r = np.sqrt(-2.0 * np.log(u[0]))
        theta = 2.0 * np.pi * u[1]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return (mean + std * z).reshape(shape)

    def integers(self, shape=(), low: int = 0, high: int = 2) -> np.ndarray:
        """Uniform integers in [low, high)."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        shape = _as_shape(shape)
        n = int(np.prod(shape)) if shape else 1
        words = self._next_words(n)
        span = np.uint64(high - low)
        out = (words % span).astype(np.int64) + low
        return out.reshape(shape)

    def split(self) -> "Rng":
        """Derive an independent child stream (e.g. data vs. init)."""
        word = int(self._next_words(1)[0])
        return Rng(word)


def _as_shape(shape) -> tuple:
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)


def prng_fill(rng: Rng, shape, dist: str = "normal", **kw) -> np.ndarray:
    """Fill a tensor from a named distribution; advances ``rng``.

    dist is "uniform" (kw: low, high) or "normal" (kw: mean, std).
    """
    if dist == "uniform":
        return rng.uniform(shape, **kw)
    if dist == "normal":
        return rng.normal(shape, **kw)
    raise ValueError(f"unknown distribution {dist!r}")
