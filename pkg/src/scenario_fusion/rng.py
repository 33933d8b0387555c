"""Portable pseudo-random numbers.

Counter-based SplitMix64 (Steele, Lea & Flood 2014): output ``i`` of a
stream seeded with ``s`` is ``mix(s + (i + 1) * 0x9E3779B97F4A7C15)`` with the
usual 30/27/31 xor-shift multiply finalizer, all mod 2**64.  Uniforms take the
top 53 bits; normals use the Box-Muller cosine branch on consecutive pairs.
Any language with 64-bit unsigned wraparound arithmetic reproduces the
integer stream exactly.
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


def _mix_int(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, *labels: object) -> int:
    """Child seed for an independent sub-stream named by ``labels``."""
    state = int(seed) & _MASK
    for label in labels:
        for byte in str(label).encode("utf-8") + b"\x00":
            state = _mix_int((state ^ byte) + 0x9E3779B97F4A7C15 & _MASK)
    return state


class SplitMix64:
    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.seed) + idx * GOLDEN)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return low + (high - low) * u

    def normal(self, n: int, loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        u = self.uniform(2 * n)
        u1 = 1.0 - u[0::2]  # (0, 1]
        u2 = u[1::2]
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return loc + scale * z

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        """Integers in ``[low, high)``."""
        if high <= low:
            raise ValueError("empty integer range")
        u = self.uniform(n)
        return np.minimum(low + np.floor(u * (high - low)).astype(np.int64), high - 1)

    def choice(self, n_items: int, size: int, p: np.ndarray | None = None) -> np.ndarray:
        if p is None:
            return self.integers(0, n_items, size)
        cdf = np.cumsum(np.asarray(p, dtype=float))
        cdf /= cdf[-1]
        return np.minimum(np.searchsorted(cdf, self.uniform(size), side="right"), n_items - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        out = np.arange(n)
        if n < 2:
            return out
        u = self.uniform(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            out[i], out[j] = out[j], out[i]
        return out
