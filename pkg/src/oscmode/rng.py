"""Counter-based SplitMix64 generator with Box-Muller normals.

Every random draw in the package goes through :class:`Rng` so that identical
seeds give identical streams on any platform, independent of numpy's own
bit generators. Output ``i`` of a stream with seed ``s`` is
``mix64(s + i * 0x9E3779B97F4A7C15)``, which makes block generation a pure
vectorised function of the counter.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finaliser applied elementwise to a uint64 array."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *keys: int | str) -> int:
    """Deterministically derive an independent child seed from ``seed`` and keys."""
    state = int(seed) & _MASK
    for key in keys:
        if isinstance(key, str):
            k = 0
            for byte in key.encode("utf-8"):
                k = (k * 131 + byte) & _MASK
        else:
            k = int(key) & _MASK
        state = int(mix64(np.array([((state ^ k) + 0x9E3779B97F4A7C15) & _MASK], dtype=np.uint64))[0])
    return state


class Rng:
    """Seeded stream of 64-bit outputs; all methods advance a shared counter."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.counter = 0

    def uint64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return mix64(np.uint64(self.seed) + idx * _GAMMA)

    def random(self, size=None) -> np.ndarray:
        """Uniform doubles in [0, 1) with 53 random bits."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.uint64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u[0] if size is None else u.reshape(size)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return low + (high - low) * self.random(size)

    def normal(self, size) -> np.ndarray:
        """Standard normals by the Box-Muller transform, consumed in pairs."""
        n = int(np.prod(size))
        pairs = (n + 1) // 2
        bits = self.uint64(2 * pairs)
        u1 = ((bits[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (bits[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n].reshape(size)

    def integers(self, low: int, high: int, size=None):
        """Integers in [low, high) by scaling a uniform draw."""
        span = high - low
        if span <= 0:
            raise ValueError("empty range")
        u = self.random(1 if size is None else size)
        out = low + np.minimum(np.floor(u * span).astype(np.int64), span - 1)
        return int(out[0]) if size is None else out

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uint64(n), kind="stable")
