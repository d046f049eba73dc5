"""Portable seeded generator used for every synthetic fixture.

SplitMix64 (Steele, Lea & Flood 2014) in counter form: the k-th output of a
stream seeded with ``s`` is ``mix(s + (k + 1) * GOLDEN)``. That makes the
sequence trivial to reproduce in any language and lets numpy draw whole
blocks at once. Floats use the top 53 bits: ``(z >> 11) * 2**-53``.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *keys: int) -> int:
    """Combine a base seed with integer keys (layer, frame, ...) into a new seed."""
    s = seed & _MASK
    for k in keys:
        s = int(SplitMix64((s ^ (k * 0x9E3779B97F4A7C15)) & _MASK).next_u64(1)[0])
    return s


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = seed & _MASK

    def next_u64(self, n: int) -> np.ndarray:
        k = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + k * GOLDEN
            out = _mix(z)
        self.state = (self.state + n * int(GOLDEN)) & _MASK
        return out

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """n floats in [low, high)."""
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return low + (high - low) * u

    def normal(self, n: int) -> np.ndarray:
        """Box-Muller on pairs of uniforms; deterministic but not the fastest path."""
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)  # (0, 1]
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n]
