"""Deterministic random number generation shared by splitting and initialization.

splitmix64 is used everywhere a seeded decision must be reproducible
bit-for-bit across platforms and implementations.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """splitmix64 generator (Steele, Lea, Flood 2014)."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def next_u64_array(self, count: int) -> np.ndarray:
        """Vectorized next_u64: the state is counter-based, so the next
        ``count`` outputs are a pure function of state + i * gamma."""
        idx = np.arange(1, count + 1, dtype=np.uint64)
        z = np.uint64(self.state) + idx * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
        self.state = (self.state + count * _GAMMA) & _MASK
        return z

    def uniform_array(self, count: int) -> np.ndarray:
        """float64 array in [0, 1), 53 random bits each."""
        return (self.next_u64_array(count) >> np.uint64(11)) * 2.0**-53

    def below(self, n: int) -> int:
        """Integer in [0, n). Plain modulo: bias is irrelevant here,
        cross-implementation determinism is what matters."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        return self.next_u64() % n

    def uniform(self) -> float:
        """Float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, high index down to 1."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
