"""Finite truncations with open exits and their stationary laws.

A truncation keeps generations 0..n; particles enter the empty root at rate
lambda, jump along edges and leave from generation n at rate r_x.  States are
bitmasks over the vertices in (generation, id) order, so the state space of a
truncation embeds in that of the next one by zero padding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .engine import EventLog, generation_occupation
from .rates import RateFamily, net_flows
from .tree import Tree, bfs_order

STATE_CAP = 20            # vertices
DIRECT_CAP = 10           # sparse LU up to 2^10 states, preconditioned GMRES above


class EquilibriumError(ValueError):
    pass


@dataclass
class Truncation:
    tree: Tree
    family: RateFamily
    depth: int
    lam: float

    def __post_init__(self):
        if not self.lam >= 0:
            raise EquilibriumError("lambda must be non-negative")
        self.vertices = bfs_order(self.tree, self.depth)
        self.index = {v: k for k, v in enumerate(self.vertices)}
        self.edges = []       # (bit of x, bit of y, rate)
        self.exits = []       # (bit of x, rate)
        for v in self.vertices:
            if self.tree.gen[v] < self.depth:
                ch = self.tree.ensure_children(v)
                for y, r in zip(ch, self.family.child_rates(self.tree, v)):
                    self.edges.append((self.index[v], self.index[y], r))
            else:
                self.exits.append((self.index[v], self.family.out_rate(self.tree, v)))

    @property
    def size(self) -> int:
        return len(self.vertices)

    def generator(self):
        """Sparse generator Q (rows: from-state)."""
        import scipy.sparse as sp
        V = self.size
        if V > STATE_CAP:
            raise EquilibriumError(
                f"{V} vertices exceed the exact-solve cap of {STATE_CAP}; "
                "estimate the stationary law by simulation instead")
        N = 1 << V
        s = np.arange(N, dtype=np.int64)
        rows, cols, vals = [], [], []

        def add(mask, flip, rate):
            src = s[mask]
            rows.append(src)
            cols.append(src ^ flip)
            vals.append(np.full(len(src), rate))

        if self.lam > 0:
            add((s & 1) == 0, 1, self.lam)
        for bx, by, r in self.edges:
            add(((s >> bx) & 1 == 1) & ((s >> by) & 1 == 0), (1 << bx) | (1 << by), r)
        for bx, r in self.exits:
            add((s >> bx) & 1 == 1, 1 << bx, r)
        rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
        vals = np.concatenate(vals) if vals else np.zeros(0)
        out = np.bincount(rows, weights=vals, minlength=N)
        Q = sp.csr_matrix((np.concatenate([vals, -out]),
                           (np.concatenate([rows, s]), np.concatenate([cols, s]))), shape=(N, N))
        return Q


@dataclass
class StationaryDist:
    trunc: Truncation
    probs: np.ndarray
    residual: float

    @property
    def n_sites(self) -> int:
        return self.trunc.size

    def marginals(self) -> np.ndarray:
        s = np.arange(len(self.probs), dtype=np.int64)
        return np.array([self.probs[(s >> b) & 1 == 1].sum() for b in range(self.n_sites)])

    def expect_upset(self, filters) -> float:
        return upset_mass(self.probs, filters)

    def write_marginals(self, path) -> None:
        lines = ["vertex,marginal"] + [f"{v},{m!r}" for v, m in
                                       zip(self.trunc.vertices, self.marginals().tolist())]
        Path(path).write_text("\n".join(lines) + "\n")


def exact_stationary(trunc: Truncation, max_cycles: int = 50) -> StationaryDist:
    """Solve pi Q = 0, sum pi = 1 for the truncated chain.

    The balance equation of the empty state is replaced by pi_0 = 1 and the
    result is normalised afterwards; a dense normalisation row would fill in
    the factorisation.  Entries and jumps map a state to a larger bitmask and
    only exits go down, so Q^T is lower triangular up to the exit terms and
    a Gauss-Seidel preconditioner makes GMRES converge in a cycle or two.
    Sparse LU of the whole system fills in badly beyond about 2^10 states.
    """
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla
    Q = trunc.generator()
    N = Q.shape[0]
    if trunc.lam == 0:
        pi = np.zeros(N)
        pi[0] = 1.0
        return StationaryDist(trunc, pi, float(np.abs(Q.T @ pi).max()))
    A = Q.T.tolil()
    A.rows[0], A.data[0] = [0], [1.0]
    A = A.tocsc()
    b = np.zeros(N)
    b[0] = 1.0

    def normalised(x):
        x = np.maximum(x, 0.0)
        x /= x.sum()
        return x, float(np.abs(Q.T @ x).max())

    if trunc.size <= DIRECT_CAP:
        pi, resid = normalised(spla.splu(A).solve(b))
    else:
        lower = spla.splu(sp.tril(A).tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0,
                          options=dict(SymmetricMode=True))
        M = spla.LinearOperator(A.shape, lower.solve)
        x = b.copy()
        for _ in range(max_cycles):
            x, _ = spla.gmres(A, b, x0=x, M=M, rtol=1e-15, atol=0.0, restart=60, maxiter=1)
            pi, resid = normalised(x.copy())
            if resid <= 1e-12:
                break
        if resid > 1e-10:
            raise EquilibriumError(f"iterative stationary solve stalled at residual {resid:.3g}")
    return StationaryDist(trunc, pi, resid)


# increasing functions -----------------------------------------------------------------

def upset_mass(probs: np.ndarray, filters) -> float:
    """Mass of the union of principal filters {eta >= a}; ``filters`` are bitmasks."""
    s = np.arange(len(probs), dtype=np.int64)
    hit = np.zeros(len(probs), dtype=bool)
    for a in filters:
        hit |= (s & a) == a
    return float(probs[hit].sum())


def random_upsets(n_sites: int, count: int, seed: int, max_filters: int = 3,
                  max_size: int = 3) -> list[tuple[int, ...]]:
    """Random upward-closed sets as unions of principal filters over the first n_sites bits."""
    rng = np.random.Generator(np.random.PCG64(seed))
    out = []
    for _ in range(count):
        k = int(rng.integers(1, max_filters + 1))
        fs = []
        for _ in range(k):
            size = int(rng.integers(1, min(max_size, n_sites) + 1))
            bits = rng.choice(n_sites, size=size, replace=False)
            fs.append(int(sum(1 << int(b) for b in bits)))
        out.append(tuple(fs))
    return out


@dataclass
class MonotoneCertificate:
    ok: bool
    checked: int
    worst_gap: float                 # max of E_lower[f] - E_upper[f]
    witness: tuple | None            # filters of the worst violating f


def _compare(lower, upper, upsets, tol):
    worst, witness = -math.inf, None
    for fs in upsets:
        gap = lower(fs) - upper(fs)
        if gap > worst:
            worst = gap
            if gap > tol:
                witness = fs
    return MonotoneCertificate(witness is None, len(upsets), worst, witness)


def monotone_check(pi_n: StationaryDist, pi_n1: StationaryDist, sample_functions=200,
                   seed: int = 0, tol: float = 1e-10) -> MonotoneCertificate:
    """E_{pi_n}[f] <= E_{pi_{n+1}}[f] + tol for sampled increasing indicators f.

    pi_n is extended by empty sites outside its truncation.  ``sample_functions``
    is a count or an explicit list of filter tuples on the shared sites.
    """
    if pi_n.trunc.vertices != pi_n1.trunc.vertices[:pi_n.n_sites]:
        raise EquilibriumError("the smaller truncation must be a prefix of the larger one")
    upsets = (random_upsets(pi_n.n_sites, sample_functions, seed)
              if isinstance(sample_functions, int) else list(sample_functions))
    upsets = [(0,)] + upsets           # f == 1
    return _compare(pi_n.expect_upset, pi_n1.expect_upset, upsets, tol)


def bernoulli_mass(n_sites: int, rho: float, filters) -> float:
    N = 1 << n_sites
    s = np.arange(N, dtype=np.int64)
    ones = np.zeros(N, dtype=np.int64)
    for b in range(n_sites):
        ones += (s >> b) & 1
    probs = rho ** ones * (1.0 - rho) ** (n_sites - ones)
    return upset_mass(probs, filters)


def bernoulli_check(pi: StationaryDist, rho: float, sample_functions=200, seed: int = 0,
                    tol: float = 1e-10) -> MonotoneCertificate:
    """E_pi[f] <= E_{nu_rho}[f] + tol for sampled increasing indicators."""
    upsets = (random_upsets(pi.n_sites, sample_functions, seed)
              if isinstance(sample_functions, int) else list(sample_functions))
    n = pi.n_sites
    return _compare(pi.expect_upset, lambda fs: bernoulli_mass(n, rho, fs), upsets, tol)


# flow identity ------------------------------------------------------------------------------

def _as_fraction(v):
    return v if isinstance(v, Fraction) else Fraction(v)


def flow_generator_identity(A, family: RateFamily, tree: Tree, rho, lam):
    """Integral of L f against the Bernoulli(rho) product measure, f = prod_{x in A} eta(x).

    Computed exactly with Fractions (floats are converted exactly).
    """
    A = set(A)
    if not A:
        return Fraction(0)
    rho, lam = _as_fraction(rho), _as_fraction(lam)
    total = Fraction(0)
    for x in A:
        if x != Tree.ROOT:
            p = tree.parent[x]
            if p not in A:
                total += _edge_exact(family, tree, p, x)
        for y in tree.ensure_children(x):
            if y not in A:
                total -= _edge_exact(family, tree, x, y)
    if Tree.ROOT in A:
        total += lam / rho
    return (1 - rho) * rho ** len(A) * total


def _edge_exact(family, tree, x, y):
    if family.symbolic:
        return family.gen_rate_exact(tree.gen[x])
    return Fraction(family.edge_rate(tree, x, y))


def flow_generator_bruteforce(A, family: RateFamily, tree: Tree, rho, lam):
    """Same quantity by summing the generator over all configurations near A."""
    A = sorted(set(A))
    if not A:
        return Fraction(0)
    rho, lam = _as_fraction(rho), _as_fraction(lam)
    sites = set(A)
    for x in A:
        if x != Tree.ROOT:
            sites.add(tree.parent[x])
        sites.update(tree.ensure_children(x))
    sites = sorted(sites)
    idx = {v: k for k, v in enumerate(sites)}
    moves = []      # (from bit, to bit, rate); from bit -1 is the reservoir
    if Tree.ROOT in idx:
        moves.append((-1, idx[Tree.ROOT], lam))
    for v in sites:
        for y in tree.ensure_children(v):
            if y in idx:
                moves.append((idx[v], idx[y], _edge_exact(family, tree, v, y)))
    amask = sum(1 << idx[x] for x in A)
    total = Fraction(0)
    n = len(sites)
    for s in range(1 << n):
        k = bin(s).count("1")
        w = rho ** k * (1 - rho) ** (n - k)
        f0 = 1 if s & amask == amask else 0
        lf = Fraction(0)
        for a, b, r in moves:
            if (s >> b) & 1 or (a >= 0 and not (s >> a) & 1):
                continue
            t = s | (1 << b)
            if a >= 0:
                t &= ~(1 << a)
            lf += r * ((1 if t & amask == amask else 0) - f0)
        total += w * lf
    return total


# density and current -----------------------------------------------------------------------

def generation_sizes(tree: Tree, n: int) -> list[int]:
    law = tree.law
    if law.is_dirac and not tree.overrides:
        k = law.support[0]
        return [k ** g for g in range(n + 1)]
    return [len(tree.generation(g)) for g in range(n + 1)]


def density_profile(source, n: int, t0: float | None = None, t1: float | None = None) -> np.ndarray:
    """l -> mean occupation per vertex of generation l, for l = 0..n.

    ``source`` is a :class:`StationaryDist` (exact) or an :class:`EventLog`
    (time average over [t0, t1]; a point in time when t0 == t1).
    """
    if isinstance(source, StationaryDist):
        if n > source.trunc.depth:
            raise EquilibriumError("the truncation does not reach generation n")
        m = source.marginals()
        gens = np.array([source.trunc.tree.gen[v] for v in source.trunc.vertices])
        return np.array([m[gens == g].mean() for g in range(n + 1)])
    if isinstance(source, EventLog):
        t1 = source.horizon if t1 is None else t1
        t0 = t1 if t0 is None else t0
        sizes = np.array(generation_sizes(source.tree, n), dtype=np.float64)
        if t1 > t0:
            occ = generation_occupation(source, t0, t1, n) / (t1 - t0)
        else:
            from .engine import occupancy_at
            occ = np.zeros(n + 1)
            for x in occupancy_at(source, t1):
                g = source.tree.gen[x]
                if g <= n:
                    occ[g] += 1
        return occ / sizes
    raise EquilibriumError("source must be a StationaryDist or an EventLog")


def write_density(profile, path) -> None:
    lines = ["generation,density"] + [f"{g},{float(v)!r}" for g, v in enumerate(profile)]
    Path(path).write_text("\n".join(lines) + "\n")


def root_current_rate(log: EventLog, T: float, pi_empty: float | None = None,
                      lam: float | None = None, rho: float | None = None,
                      family: RateFamily | None = None) -> dict:
    """J_o(T) / T next to lambda P(eta(o) = 0) and the floor q(o) rho (1 - rho)."""
    from .engine import current
    out = {"empirical": current(log, T, vertex=Tree.ROOT) / T}
    if pi_empty is not None and lam is not None:
        out["reservoir_bound"] = lam * pi_empty
    if rho is not None and family is not None:
        q_o = float(net_flows(family, log.tree, 1)[Tree.ROOT])
        out["superflow_floor"] = q_o * rho * (1.0 - rho)
    return out
