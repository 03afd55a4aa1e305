"""Deterministic pseudo-random numbers for seeded fitting.

SplitMix64 (a 64-bit LCG-equivalent mixer): the state advances by the odd
constant 0x9E3779B97F4A7C15 and each output is finalized with two xor-shift
multiplies (0xBF58476D1CE4E5B9, 0x94D049BB133111EB). Outputs are platform
independent and bit-reproducible for a given seed, which keeps fitted
artifacts byte-identical across runs.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_uint64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return z ^ (z >> 31)

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 random mantissa bits."""
        return (self.next_uint64() >> 11) * 2.0**-53

    def next_index(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError(f"n must be positive, got {n}")
        return int(self.next_float() * n)

    def weighted_index(self, weights: np.ndarray) -> int:
        """Index sampled proportionally to nonnegative weights.

        Falls back to a uniform draw when all weights are zero.
        """
        total = float(np.sum(weights))
        if total <= 0.0:
            return self.next_index(len(weights))
        u = self.next_float() * total
        cumulative = np.cumsum(weights)
        return int(np.searchsorted(cumulative, u, side="right").clip(0, len(weights) - 1))

    def subsample(self, n: int, m: int) -> np.ndarray:
        """m distinct indices from range(n), by partial Fisher-Yates."""
        if not 0 <= m <= n:
            raise ValueError(f"cannot draw {m} distinct indices from {n}")
        pool = np.arange(n)
        for i in range(m):
            j = i + self.next_index(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return np.sort(pool[:m])
