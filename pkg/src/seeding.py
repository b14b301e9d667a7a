"""Reproducible child random generators derived from a master seed."""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    """One SplitMix64 avalanche round on a 64-bit integer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def child_seed(master_seed: int, *keys: int, purpose: str = "") -> int:
    """Mix a master seed, integer keys and a purpose tag into a 64-bit seed.

    The same inputs always give the same seed, and changing any key or the tag
    decorrelates the result, so work units can be generated in any order or in
    parallel without sharing generator state.
    """
    state = _splitmix64(master_seed & _MASK64)
    for key in keys:
        state = _splitmix64(state ^ (int(key) & _MASK64))
    if purpose:
        state = _splitmix64(state ^ zlib.crc32(purpose.encode("utf-8")))
    return state


def child_rng(master_seed: int, *keys: int, purpose: str = "") -> np.random.Generator:
    """Return a PCG64 generator seeded by :func:`child_seed`."""
    return np.random.Generator(np.random.PCG64(child_seed(master_seed, *keys, purpose=purpose)))
