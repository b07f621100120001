"""Deterministic noise: xoshiro256** seeded by splitmix64.

Update equations (all arithmetic mod 2**64)::

    splitmix64:  x += 0x9E3779B97F4A7C15
                 z = x
                 z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
                 z = (z ^ (z >> 27)) * 0x94D049BB133111EB
                 return z ^ (z >> 31)

    xoshiro256**: result = rotl(s1 * 5, 7) * 9
                  t = s1 << 17
                  s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3
                  s2 ^= t;  s3 = rotl(s3, 45)

Noise is a pure function of ``(seed, t)``: the generator state is seeded by
running splitmix64 from ``x = bits(t) ^ (seed * 0x9E3779B97F4A7C15)`` and the
first xoshiro256** output is mapped to ``[0, 1)`` via its top 53 bits.  The
first output depends only on ``s1``, which is what :func:`uniform_at` uses.
"""

from __future__ import annotations

import struct

import numpy as np

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK


def splitmix64_mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.x = seed & MASK

    def next(self) -> int:
        self.x = (self.x + GOLDEN) & MASK
        return splitmix64_mix(self.x)


class Xoshiro256StarStar:
    def __init__(self, seed: int):
        sm = SplitMix64(seed)
        self.s = [sm.next() for _ in range(4)]

    def next(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK, 7) * 9) & MASK
        t = (s[1] << 17) & MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        return (self.next() >> 11) * 2.0**-53


def _key(seed: int, t: float) -> int:
    (bits,) = struct.unpack("<Q", struct.pack("<d", t))
    return bits ^ ((seed * GOLDEN) & MASK)


def uniform_at(seed: int, t: float) -> float:
    """Uniform deviate in [0, 1) determined by ``(seed, t)``."""
    return Xoshiro256StarStar(_key(seed, t)).uniform()


def uniform_at_array(seed: int, t) -> np.ndarray:
    """Vectorised :func:`uniform_at`, bit-identical per element."""
    t = np.ascontiguousarray(t, dtype=np.float64)
    x = t.view(np.uint64) ^ np.uint64((seed * GOLDEN) & MASK)
    # s1 is the second splitmix64 output
    z = x + np.uint64((2 * GOLDEN) & MASK)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    s1 = z ^ (z >> np.uint64(31))
    v = s1 * np.uint64(5)
    v = ((v << np.uint64(7)) | (v >> np.uint64(57))) * np.uint64(9)
    return (v >> np.uint64(11)).astype(np.float64) * 2.0**-53


def noise_at(seed: int, amplitude: float, t):
    """Uniform noise in ``[-amplitude, +amplitude)``; scalar or array ``t``."""
    if np.ndim(t) == 0:
        return amplitude * (2.0 * uniform_at(seed, float(t)) - 1.0)
    return amplitude * (2.0 * uniform_at_array(seed, t) - 1.0)
