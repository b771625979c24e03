"""Deterministic parameter-initialization PRNG.

xoshiro256** with splitmix64 seeding (constants from the reference
definitions: splitmix64 increment 0x9E3779B97F4A7C15, mixers
0xBF58476D1CE4E5B9 / 0x94D049BB133111EB; xoshiro output multipliers 5 and 9,
rotations 7 and 45). One named stream per layer keeps initialization
independent of construction order elsewhere.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 64) - 1


def _splitmix64(state: int):
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256:
    """xoshiro256** generator yielding uniform float64 in [0, 1)."""

    def __init__(self, seed: int):
        state = seed & _MASK
        s = []
        for _ in range(4):
            state, word = _splitmix64(state)
            s.append(word)
        self.s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def uniform(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = (self.next_u64() >> 11) * 2.0**-53
        return out


def stream_seed(root_seed: int, name: str) -> int:
    """Stable 64-bit sub-seed for a named stream."""
    digest = hashlib.sha256(f"{root_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def kaiming_uniform(rng: Xoshiro256, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """He-style uniform init: bound = sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / fan_in)
    n = int(np.prod(shape))
    return ((rng.uniform(n) * 2.0 - 1.0) * bound).reshape(shape).astype(np.float32)
