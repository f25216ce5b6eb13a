"""Inhomogeneous last passage percolation on the corner (1-based indices).

Cell (i, j) holds w[i, j] = omega / r_min(i - j - 1) below the diagonal,
omega / lambda on it and 0 above it.  Read as a particle system, column j is
particle j and i - j the generation it moves into.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rates import Profile, RateFamily


class LppError(ValueError):
    pass


@dataclass
class LppEnvironment:
    """Weights ``W`` of shape (I + 1, J + 1); row and column 0 are padding."""
    W: np.ndarray
    omega: np.ndarray | None = None
    lam: float | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.W.shape[0] - 1, self.W.shape[1] - 1

    def w(self, i: int, j: int) -> float:
        return float(self.W[i, j])

    @classmethod
    def from_weights(cls, weights) -> "LppEnvironment":
        w = np.asarray(weights, dtype=np.float64)
        W = np.zeros((w.shape[0] + 1, w.shape[1] + 1))
        W[1:, 1:] = w
        return cls(W)

    def to_csv(self, path) -> None:
        rows = [",".join(repr(float(v)) for v in row) for row in self.W[1:, 1:]]
        Path(path).write_text("# rows i = 1.., columns j = 1..\n" + "\n".join(rows) + "\n")

    @classmethod
    def from_csv(cls, path) -> "LppEnvironment":
        rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
        return cls.from_weights([[float(v) for v in r.split(",")] for r in rows])


def _rmin_fn(rmin):
    if isinstance(rmin, Profile):
        return rmin.r_min
    if isinstance(rmin, RateFamily):
        # symbolic rates depend on the generation only, so r_min(l) is the edge rate
        return rmin.gen_rate
    if callable(rmin):
        return rmin
    raise LppError("r_min must be a Profile, a symbolic RateFamily or a callable")


def build_env(I: int, J: int, lam: float, rmin, seed: int) -> LppEnvironment:
    """Environment on [1, I] x [1, J] from i.i.d. Exp(1) base draws."""
    if not lam > 0:
        raise LppError("lambda must be positive")
    f = _rmin_fn(rmin)
    rng = np.random.Generator(np.random.PCG64(seed))
    omega = np.zeros((I + 1, J + 1))
    omega[1:, 1:] = rng.standard_exponential((I, J))
    W = np.zeros_like(omega)
    scale = {}
    for i in range(1, I + 1):
        for j in range(1, min(i, J) + 1):
            if j == i:
                W[i, j] = omega[i, j] / lam
            else:
                g = i - j - 1
                if g not in scale:
                    scale[g] = f(g)
                W[i, j] = omega[i, j] / scale[g]
    return LppEnvironment(W, omega, lam)


def in_region(i: int, j: int, m: int | None) -> bool:
    return m is None or j >= i - m


def passage_table(env: LppEnvironment, m: int | None = None) -> np.ndarray:
    """G[i, j] for every cell (NaN outside A_m); ``m=None`` means unrestricted."""
    if m is not None and m < 0:
        raise LppError("region offset m must be >= 0")
    I, J = env.shape
    W = env.W.tolist()
    G = [[math.nan] * (J + 1) for _ in range(I + 1)]
    for i in range(1, I + 1):
        Gi, Gp, Wi = G[i], G[i - 1], W[i]
        for j in range(1, J + 1):
            if m is not None and j < i - m:
                continue
            if i == 1:
                best = Gi[j - 1] if j > 1 else 0.0
            elif j == 1 or (m is not None and j - 1 < i - m):
                best = Gp[j]
            else:
                a, b = Gp[j], Gi[j - 1]
                best = a if a >= b else b
            Gi[j] = best + Wi[j]
    return np.array(G)


def passage_time(env: LppEnvironment, i: int, j: int) -> float:
    I, J = env.shape
    if not (1 <= i <= I and 1 <= j <= J):
        raise LppError(f"({i}, {j}) is outside the environment")
    return float(passage_table(env)[i, j])


def passage_time_restricted(env: LppEnvironment, i: int, j: int, m: int) -> float:
    I, J = env.shape
    if not (1 <= i <= I and 1 <= j <= J):
        raise LppError(f"({i}, {j}) is outside the environment")
    if not in_region(i, j, m):
        raise LppError(f"({i}, {j}) is outside A_{m}")
    return float(passage_table(env, m)[i, j])


def optimal_path(env: LppEnvironment, i: int, j: int, m: int | None = None) -> list[tuple[int, int]]:
    """Backtrack one maximising up-right path from (1, 1) to (i, j)."""
    G = passage_table(env, m)
    path = [(i, j)]
    while (i, j) != (1, 1):
        up = G[i - 1, j] if i > 1 else -math.inf
        left = G[i, j - 1] if j > 1 else -math.inf
        up = -math.inf if math.isnan(up) else up
        left = -math.inf if math.isnan(left) else left
        if up >= left:
            i -= 1
        else:
            j -= 1
        path.append((i, j))
    return path[::-1]


def batch_passage(W: np.ndarray, m: int | None = None) -> np.ndarray:
    """Passage tables for a batch of environments W[s, i, j] (1-based, padded)."""
    S, I1, J1 = W.shape
    G = np.full((S, I1, J1), np.nan)
    for i in range(1, I1):
        for j in range(1, J1):
            if m is not None and j < i - m:
                continue
            if i == 1:
                best = G[:, i, j - 1] if j > 1 else 0.0
            elif j == 1 or (m is not None and j - 1 < i - m):
                best = G[:, i - 1, j]
            else:
                best = np.maximum(G[:, i - 1, j], G[:, i, j - 1])
            G[:, i, j] = best + W[:, i, j]
    return G


@dataclass
class TailReport:
    n: int
    M: int
    alpha: float
    threshold: float
    exceed_rate: float      # fraction of samples with G > threshold
    samples: int


def tail_check(profile: Profile, n: int, M: int, alpha: float, samples: int,
               lam: float = 1.0, seed: int = 0) -> TailReport:
    """Monte Carlo rate of G_{n+M, n}(A_M) > 4 (1 + alpha) (n + M) / min_{|x|<=M} r_x."""
    if not alpha > 0:
        raise LppError("alpha must be positive")
    I, J = n + M, n
    rng = np.random.Generator(np.random.PCG64(seed))
    omega = rng.standard_exponential((samples, I, J))
    ii, jj = np.meshgrid(np.arange(1, I + 1), np.arange(1, J + 1), indexing="ij")
    scale = np.zeros((I, J))
    below = jj < ii
    gens = (ii - jj - 1)[below]
    scale[below] = 1.0 / np.array([profile.r_min(int(g)) for g in gens])
    scale[ii == jj] = 1.0 / lam
    W = np.zeros((samples, I + 1, J + 1))
    W[:, 1:, 1:] = omega * scale
    G = batch_passage(W, M)[:, I, J]
    thr = 4.0 * (1.0 + alpha) * (n + M) / profile.min_out(0, M)
    return TailReport(n, M, alpha, thr, float(np.mean(G > thr)), samples)


def write_table(G: np.ndarray, path) -> None:
    lines = ["i,j,G"]
    for i in range(1, G.shape[0]):
        for j in range(1, G.shape[1]):
            if not math.isnan(G[i, j]):
                lines.append(f"{i},{j},{float(G[i, j])!r}")
    Path(path).write_text("\n".join(lines) + "\n")
