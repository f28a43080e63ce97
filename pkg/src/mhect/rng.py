"""Seeded 64-bit PRNG (splitmix64) so disturbance draws are portable.

The stream depends only on the integer seed, not on numpy's generator
internals, which keeps benchmark data reproducible across platforms and
implementations.
"""

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed):
        self.state = int(seed) & _MASK64

    def next_u64(self):
        self.state = (self.state + _GOLDEN) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def uniform(self, lo=0.0, hi=1.0):
        # top 53 bits -> double in [0, 1)
        u = (self.next_u64() >> 11) * 2.0 ** -53
        return lo + u * (hi - lo)

    def uniforms(self, shape, lo=0.0, hi=1.0):
        """Array of uniforms, filled in C order (row-major)."""
        n = int(np.prod(shape)) if not np.isscalar(shape) else int(shape)
        vals = np.array([self.uniform(lo, hi) for _ in range(n)])
        return vals.reshape(shape)
