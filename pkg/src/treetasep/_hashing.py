"""Counter-based hashing used for lazily grown trees and shared event streams.

Everything here is a pure function of integer keys, so a quantity derived
from (seed, path) or (seed, edge, block) is the same no matter in which order
it is requested.
"""
from __future__ import annotations

MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """splitmix64 finaliser."""
    z = (z + _GOLDEN) & MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def combine(key: int, value: int) -> int:
    return mix64((key ^ mix64(value & MASK)) & MASK)


def derive(*parts) -> int:
    """Hash a tuple of ints or strings to a 64-bit key."""
    h = 0x243F6A8885A308D3
    for p in parts:
        if isinstance(p, str):
            for b in p.encode():
                h = combine(h, b)
            h = combine(h, 0xFF)
        else:
            h = combine(h, int(p))
    return h


def uniform(key: int) -> float:
    """Uniform in (0, 1) derived from a key (never exactly 0)."""
    return ((mix64(key) >> 11) + 0.5) * _INV53
