"""Counter-based deterministic random streams.

Every random draw in this package flows through SplitMix64 output streams,
so generated city directories and training runs are reproducible byte for
byte across platforms and numpy versions. Each logical purpose (one file of
a synthetic city, one epoch's negative samples, one sweep job) gets its own
`Stream`, derived from a master seed plus string tags; adding a consumer
never shifts the values another consumer sees.

The k-th output of a stream is ``finalize(base + (k+1) * GOLDEN)`` where
``finalize`` is the SplitMix64 mixing function, so blocks of outputs can be
produced with vectorized uint64 arithmetic.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TWO53 = float(1 << 53)


def _fnv1a(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


def mix64(x: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * _MIX1) & _MASK64
    x = ((x ^ (x >> 27)) * _MIX2) & _MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, *tags: str) -> int:
    """Fold string tags into a master seed, giving an independent substream seed."""
    state = mix64(seed)
    for tag in tags:
        state = mix64(state ^ _fnv1a(tag))
    return state


class Stream:
    """A deterministic random stream identified by (seed, *tags)."""

    def __init__(self, seed: int, *tags: str):
        self._base = np.uint64(derive_seed(seed, *tags))
        self._counter = 0

    def _raw(self, m: int) -> np.ndarray:
        ks = np.arange(self._counter + 1, self._counter + m + 1, dtype=np.uint64)
        self._counter += m
        z = self._base + ks * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def uniforms(self, m: int) -> np.ndarray:
        """m doubles in [0, 1)."""
        return (self._raw(m) >> np.uint64(11)).astype(np.float64) / _TWO53

    def normals(self, m: int) -> np.ndarray:
        """m standard normal doubles (Box-Muller on stream uniforms)."""
        pairs = (m + 1) // 2
        u1 = 1.0 - self.uniforms(pairs)  # (0, 1], keeps log finite
        u2 = self.uniforms(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(2.0 * math.pi * u2)
        out[1::2] = r * np.sin(2.0 * math.pi * u2)
        return out[:m]

    def integers(self, m: int, bound: int) -> np.ndarray:
        """m integers uniform on [0, bound)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        vals = np.floor(self.uniforms(m) * bound).astype(np.int64)
        return np.minimum(vals, bound - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of 0..n-1."""
        arr = np.arange(n)
        if n < 2:
            return arr
        u = self.uniforms(n - 1)
        for i in range(n - 1, 0, -1):
            j = min(int(u[n - 1 - i] * (i + 1)), i)
            arr[i], arr[j] = arr[j], arr[i]
        return arr
