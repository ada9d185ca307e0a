"""Reproducible random streams.

Every stochastic object in the package draws from a counter-based Philox
generator keyed by (master_seed, mixed stream indices).  Streams for distinct
index tuples are statistically independent, and the draw sequence depends only
on the key — never on thread scheduling or call order — which is what makes
the bitwise-determinism check possible.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> int:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix_indices(*indices: int) -> int:
    """Collapse an index tuple to one well-mixed 64-bit word."""
    acc = 0x5851F42D4C957F2D
    for idx in indices:
        acc = _splitmix64(acc ^ (int(idx) & _MASK64))
    return acc


def stream(master_seed: int, *indices: int) -> np.random.Generator:
    """Independent generator for the given (seed, index...) coordinates."""
    key = np.array([int(master_seed) & _MASK64, mix_indices(*indices)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
