"""Shared Poisson event streams.

Each stream is a fixed function of its 64-bit key.  A rate-r stream is the
unit-rate stream read on the clock u = r t, and the unit-rate stream is cut
into blocks [k, k+1) whose points are hashed from (key, k).  Two simulations
that ask for the same key therefore see identical ring times, whatever order
they ask in.
"""
from __future__ import annotations

import math

from ._hashing import combine, uniform

_POISSON1_CDF = []
_acc, _term = 0.0, math.exp(-1.0)
for _n in range(40):
    _acc += _term
    _POISSON1_CDF.append(_acc)
    _term /= (_n + 1)


def _block(key: int, k: int) -> list[float]:
    bk = combine(key, k)
    u = uniform(bk)
    n = 0
    while n < len(_POISSON1_CDF) - 1 and u > _POISSON1_CDF[n]:
        n += 1
    if n == 0:
        return []
    return sorted(uniform(combine(bk, j + 1)) for j in range(n))


class Stream:
    """Ring times of one stream with rate ``rate``; rings are indexed by (block, slot)."""

    __slots__ = ("key", "rate", "_cache")

    def __init__(self, key: int, rate: float):
        if not rate > 0:
            raise ValueError("stream rate must be positive")
        self.key = key
        self.rate = rate
        self._cache = {}

    def block(self, k: int) -> list[float]:
        b = self._cache.get(k)
        if b is None:
            b = _block(self.key, k)
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[k] = b
        return b

    def time(self, k: int, j: int) -> float:
        return (k + self.block(k)[j]) / self.rate

    def first_after(self, t: float) -> tuple[float, int, int]:
        """First ring strictly after ``t``: (time, block, slot)."""
        k = max(int(math.floor(t * self.rate)) - 1, 0)
        while True:
            for j, u in enumerate(self.block(k)):
                s = (k + u) / self.rate
                if s > t:
                    return s, k, j
            k += 1

    def after(self, k: int, j: int) -> tuple[float, int, int]:
        """Ring following ring (k, j)."""
        b = self.block(k)
        if j + 1 < len(b):
            return (k + b[j + 1]) / self.rate, k, j + 1
        k += 1
        while True:
            b = self.block(k)
            if b:
                return (k + b[0]) / self.rate, k, 0
            k += 1

    def rings(self, t0: float, t1: float) -> list[float]:
        out = []
        s, k, j = self.first_after(t0)
        while s <= t1:
            out.append(s)
            s, k, j = self.after(k, j)
        return out
