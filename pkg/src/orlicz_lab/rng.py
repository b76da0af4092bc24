"""Seeded SplitMix64 streams.

The generator is fully specified, so its streams can be reproduced bit
for bit in any language.  With 64-bit wrapping arithmetic::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

Uniform doubles take the top 53 bits: ``(z >> 11) * 2**-53``.  Normals
use Box-Muller on consecutive uniform pairs ``(u1, u2)`` as
``sqrt(-2 log(1 - u1)) * cos(2 pi u2)``.  :meth:`SplitMix64.child`
derives an independent stream from the next output.
"""

from __future__ import annotations

import numpy as np

__all__ = ["SplitMix64"]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z):
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Counter-based SplitMix64; ``next_u64(n)`` advances the state by ``n``."""

    def __init__(self, seed=0):
        self.state = int(seed) & _MASK

    def next_u64(self, n=1):
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * _GOLDEN
        self.state = (self.state + n * int(_GOLDEN)) & _MASK
        return _mix(states)

    def uniform(self, size=None, low=0.0, high=1.0):
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = self.uniform(2 * n).reshape(n, 2)
        z = np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, low, high, size=None):
        """Uniform integers in ``[low, high)`` via ``low + floor(u * (high - low))``."""
        u = self.uniform(size)
        return low + np.floor(np.asarray(u) * (high - low)).astype(np.int64)

    def child(self):
        return SplitMix64(int(self.next_u64(1)[0]))
