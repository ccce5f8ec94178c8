"""Counter-based SplitMix64 random streams.

Every random quantity in the package (sensing matrices, supports, amplitudes,
noise, weight initialisation, minibatch order) is drawn from this generator so
that a seed fully determines the output, independent of numpy's own
generators.

Stream definition
-----------------
For a 64-bit ``seed`` the ``i``-th output (``i = 1, 2, ...``) is::

    state_i = seed + i * 0x9E3779B97F4A7C15          (mod 2**64)
    z = (state_i ^ (state_i >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out_i = z ^ (z >> 31)

which is exactly the SplitMix64 sequence, written in counter form so it can be
evaluated in vectorised batches.

* uniform doubles: ``(out >> 11) * 2**-53`` in ``[0, 1)``
* standard normals: Box-Muller on consecutive uniform pairs ``(u1, u2)``,
  ``r = sqrt(-2 ln(1 - u1))``, emitting ``r cos(2 pi u2)`` then
  ``r sin(2 pi u2)``
* integers below ``n``: ``floor(u * n)`` for a uniform double ``u``
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_DERIVE = np.uint64(0xD1B54A32D192ED03)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *tags: int) -> int:
    """Derive an independent child seed from ``seed`` and integer tags."""
    s = np.array([seed & _MASK64], dtype=np.uint64)
    for tag in tags:
        t = np.array([tag & _MASK64], dtype=np.uint64)
        s = _mix(s ^ (t * _DERIVE + _GOLDEN))
    return int(s[0])


class SplitMix64:
    """Seeded stream of 64-bit outputs with a position counter."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.position = 0

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.position + 1, self.position + n + 1, dtype=np.uint64)
        self.position += n
        states = np.uint64(self.seed) + idx * _GOLDEN
        return _mix(states)

    def uniform(self, n: int) -> np.ndarray:
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform_range(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.uniform(n)

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        out = np.empty((pairs, 2))
        out[:, 0] = radius * np.cos(angle)
        out[:, 1] = radius * np.sin(angle)
        return out.reshape(-1)[:n]

    def integers_below(self, bounds) -> np.ndarray:
        """One integer in ``[0, b)`` for each entry ``b`` of ``bounds``."""
        bounds = np.asarray(bounds, dtype=np.int64)
        u = self.uniform(bounds.size)
        return np.minimum((u * bounds).astype(np.int64), bounds - 1)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)`` via a partial Fisher-Yates shuffle."""
        pool = np.arange(n)
        if k == 0:
            return pool[:0]
        offsets = self.integers_below(np.arange(n, n - k, -1))
        for i, off in enumerate(offsets):
            j = i + int(off)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k].copy()

    def permutation(self, n: int) -> np.ndarray:
        return self.choice_without_replacement(n, n)
