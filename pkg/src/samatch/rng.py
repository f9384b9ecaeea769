"""Deterministic random source used everywhere randomness is needed.

Built on the Philox-4x64 counter-based generator (numpy's ``np.random.Philox``
bit generator, keyed directly, bypassing SeedSequence). All derived
distributions use fixed, documented mappings so that a (seed, stream) pair
reproduces the same values on any platform:

* uniform doubles: ``(u64 >> 11) * 2**-53``, then clamped to ``[2**-53, 1)``
  so downstream logs never see 0.
* gumbel: ``-log(-log(u))``.
* normal: Box-Muller on uniform pairs.
"""

from __future__ import annotations

import numpy as np

_OPEN_EPS = 2.0**-53


def gumbel_transform(u: np.ndarray) -> np.ndarray:
    """Map uniforms in (0,1) to Gumbel(0,1) samples."""
    return -np.log(-np.log(u))


class RandomSource:
    """Counter-based RNG stream identified by (seed, stream)."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self._bg = np.random.Philox(key=[self.seed, self.stream])

    def derive(self, stream: int) -> "RandomSource":
        """Independent stream under the same seed."""
        return RandomSource(self.seed, stream)

    def raw(self, n: int) -> np.ndarray:
        return np.asarray(self._bg.random_raw(n), dtype=np.uint64)

    def uniform(self, rows: int, cols: int = 1) -> np.ndarray:
        u = (self.raw(rows * cols) >> np.uint64(11)) * _OPEN_EPS
        np.maximum(u, _OPEN_EPS, out=u)
        return u.reshape(rows, cols)

    def uniform_range(self, low: float, high: float, rows: int, cols: int = 1) -> np.ndarray:
        return low + (high - low) * self.uniform(rows, cols)

    def gumbel(self, rows: int, cols: int = 1) -> np.ndarray:
        return gumbel_transform(self.uniform(rows, cols))

    def normal(self, rows: int, cols: int = 1, std: float = 1.0) -> np.ndarray:
        n = rows * cols
        half = (n + 1) // 2
        u1 = self.uniform(half, 1).ravel()
        u2 = self.uniform(half, 1).ravel()
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return (std * z).reshape(rows, cols)

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return min(int(self.uniform(1, 1)[0, 0] * n), n - 1)

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from [0, n) by partial Fisher-Yates."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct values from {n}")
        pool = np.arange(n)
        for i in range(k):
            j = i + self.integer(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k].copy()

    def permutation(self, n: int) -> np.ndarray:
        return self.choice(n, n)


def derive_seed(base: int, index: int) -> int:
    """Stable per-item seed from a base seed (documented LCG-style mix)."""
    return (base * 6364136223846793005 + index * 1442695040888963407 + 0x9E3779B97F4A7C15) % (1 << 64)
