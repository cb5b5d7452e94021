"""Reproducible per-replicate random streams.

Replicate ``i`` of a run with master seed ``s`` gets the 64-bit seed
``splitmix64(s + i * 0x9E3779B97F4A7C15 mod 2**64)``, which feeds a PCG64
generator.  Streams therefore do not depend on thread count or scheduling.
"""

from __future__ import annotations

import numpy as np

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1


def splitmix64(z: int) -> int:
    """SplitMix64 output (finalizer) function on a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def replicate_seed(master_seed: int, i: int) -> int:
    if not 0 <= master_seed <= MASK64:
        raise ValueError("master_seed must be a 64-bit unsigned integer")
    return splitmix64((master_seed + i * GOLDEN_GAMMA) & MASK64)


def replicate_rng(master_seed: int, i: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(replicate_seed(master_seed, i)))
