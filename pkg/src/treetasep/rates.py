"""Transition-rate families on trees.

Symbolic families depend on the parent's generation only, so their
per-generation aggregates on a regular tree have closed forms
(:class:`RegularProfile`).  Tabulated aggregates on a materialised tree are
available for any family through :func:`aggregates`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .tree import OffspringLaw, Tree, iter_bfs

LOG_ORDER = "log"        # liminf D_n / log n < infinity
SUPER_LOG = "superlog"   # liminf D_n / log n = infinity
DECAY_CLASSES = (LOG_ORDER, SUPER_LOG)


class RateError(ValueError):
    pass


class DecompositionError(RateError):
    pass


def g_value(g: tuple, s: int) -> float:
    name, par = g
    if name == "exp":
        return float(par) ** (-s)
    if name == "power":
        return (1.0 + s) ** (-float(par))
    raise RateError(f"unknown decay function {name!r}")


def g_exact(g: tuple, s: int):
    name, par = g
    if name == "exp" and float(par).is_integer():
        return Fraction(1, int(par) ** s)
    return Fraction(g_value(g, s))


@dataclass(frozen=True)
class RateFamily:
    kind: str                       # constant | exponential | slowed | polynomial | custom
    d: int | None = None
    p: float | None = None
    g: tuple | None = None          # ("exp", base) or ("power", q)
    table: dict | None = field(default=None, compare=False, hash=False)
    decay_class: str | None = None
    r_sup: float = 1.0

    def __post_init__(self):
        if self.kind in ("exponential", "slowed") and (self.d is None or self.d < 3):
            raise RateError(f"{self.kind} rates need an integer d >= 3")
        if self.kind == "polynomial" and not (self.p and self.p > 0):
            raise RateError("polynomial rates need p > 0")
        if self.kind == "slowed":
            name, par = self.g or (None, None)
            if name == "exp" and float(par) < 1:
                raise RateError("g(s) = a^-s needs a >= 1")
            if name == "power" and float(par) < 0:
                raise RateError("g(s) = (1+s)^-q needs q >= 0")
            g_value(self.g, 0)
        if self.kind == "custom":
            if not self.table:
                raise RateError("custom rate table is empty")
            for e, r in self.table.items():
                if not (r > 0 and math.isfinite(r)):
                    raise RateError(f"rate {r!r} on edge {e} is not positive")
                if r > self.r_sup:
                    raise RateError(f"rate {r!r} on edge {e} exceeds r_sup={self.r_sup}")
        if self.decay_class is not None and self.decay_class not in DECAY_CLASSES:
            raise RateError(f"decay class must be one of {DECAY_CLASSES}")

    @property
    def symbolic(self) -> bool:
        return self.kind != "custom"

    # per-generation edge rate for symbolic families
    def gen_rate(self, ell: int) -> float:
        k = self.kind
        if k == "constant":
            return 1.0
        if k == "exponential":
            return float(self.d - 1) ** (-ell - 1)
        if k == "slowed":
            return float(self.d - 1) ** (-ell - 1) * g_value(self.g, ell)
        if k == "polynomial":
            return (ell + 1.0) ** (-self.p)
        raise RateError("custom rates are not a function of the generation")

    def gen_rate_exact(self, ell: int):
        k = self.kind
        if k == "constant":
            return Fraction(1)
        if k == "exponential":
            return Fraction(1, (self.d - 1) ** (ell + 1))
        if k == "slowed":
            return Fraction(1, (self.d - 1) ** (ell + 1)) * g_exact(self.g, ell)
        return Fraction(self.gen_rate(ell))

    def edge_rate(self, tree: Tree, x: int, y: int) -> float:
        if self.kind == "custom":
            try:
                return self.table[(x, y)]
            except KeyError:
                raise RateError(f"edge ({x}, {y}) is not in the rate table") from None
        if tree.parent[y] != x:
            raise RateError(f"({x}, {y}) is not an edge")
        return self.gen_rate(tree.gen[x])

    def child_rates(self, tree: Tree, x: int) -> list[float]:
        ch = tree.ensure_children(x)
        if self.kind == "custom":
            return [self.edge_rate(tree, x, y) for y in ch]
        return [self.gen_rate(tree.gen[x])] * len(ch)

    def out_rate(self, tree: Tree, x: int) -> float:
        return math.fsum(self.child_rates(tree, x))

    @property
    def decreasing(self) -> bool:
        """Edge rates are non-increasing in the generation."""
        return self.kind in ("constant", "exponential", "slowed", "polynomial")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.d is not None:
            out["d"] = self.d
        if self.p is not None:
            out["p"] = self.p
        if self.g is not None:
            out["g"] = [self.g[0], self.g[1]]
        if self.decay_class is not None:
            out["decay_class"] = self.decay_class
        if self.r_sup != 1.0:
            out["r_sup"] = self.r_sup
        return out


def Constant(decay_class: str = SUPER_LOG) -> RateFamily:
    return RateFamily("constant", decay_class=decay_class)


def Exponential(d: int, decay_class: str = LOG_ORDER) -> RateFamily:
    return RateFamily("exponential", d=d, decay_class=decay_class)


def Slowed(d: int, g: tuple = ("exp", 2.0), decay_class: str = LOG_ORDER) -> RateFamily:
    return RateFamily("slowed", d=d, g=(g[0], float(g[1])), decay_class=decay_class)


def Polynomial(p: float, decay_class: str = SUPER_LOG) -> RateFamily:
    return RateFamily("polynomial", p=float(p), decay_class=decay_class)


def CustomTable(table: dict, decay_class: str | None = None, r_sup: float | None = None) -> RateFamily:
    table = {(int(a), int(b)): float(r) for (a, b), r in table.items()}
    if r_sup is None:
        r_sup = max(1.0, max(table.values()))
    return RateFamily("custom", table=table, decay_class=decay_class, r_sup=r_sup)


def read_rate_table(path) -> dict:
    """Read "parent_id child_id rate" lines; '#' starts a comment."""
    table = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise RateError(f"line {n}: expected 'parent_id child_id rate'")
        table[(int(parts[0]), int(parts[1]))] = float(parts[2])
    return table


def write_rate_table(table: dict, path) -> None:
    lines = [f"{a} {b} {r!r}" for (a, b), r in sorted(table.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def rate(family: RateFamily, edge: tuple[int, int], tree: Tree) -> float:
    return family.edge_rate(tree, *edge)


# assumptions ---------------------------------------------------------------

def check_UE(family: RateFamily, tree: Tree, depth: int) -> tuple[bool, float]:
    """Smallest ratio of sibling edge rates over edges leaving generations < depth."""
    if family.symbolic:
        return True, 1.0
    eps = 1.0
    for x in iter_bfs(tree, depth - 1):
        rs = family.child_rates(tree, x)
        if len(rs) > 1:
            eps = min(eps, min(rs) / max(rs))
    return eps > 0, eps


def check_ED(family: RateFamily, depth: int = 50, tree: Tree | None = None,
             c_low: float = 1.0) -> tuple[bool, float, float]:
    """Witnesses (kappa, c_low) with r_min(l) >= kappa exp(-c_low l).

    Constant rates admit every c_low > 0; the value passed in is returned.
    """
    k = family.kind
    if k == "constant":
        return True, 1.0, c_low
    if k == "exponential":
        return True, 1.0 / (family.d - 1), math.log(family.d - 1)
    if k == "slowed":
        name, par = family.g
        extra = math.log(par) if name == "exp" else par * math.log(2.0)
        return True, 1.0 / (family.d - 1), math.log(family.d - 1) + extra
    if k == "polynomial":
        return True, 1.0, family.p * math.log(2.0)
    if tree is None:
        raise RateError("custom rates need the tree to check exponential decay")
    agg = aggregates(family, tree, depth)
    kappa = agg.r_min(0)
    cl = 0.0
    for ell in range(1, depth + 1):
        cl = max(cl, (math.log(kappa) - math.log(agg.r_min(ell))) / ell)
    return True, kappa, max(cl, np.finfo(float).tiny)


# aggregates ------------------------------------------------------------------

class Profile:
    """Per-generation rate aggregates.

    ``r_min``/``r_max`` are the extreme edge rates leaving generation l and
    ``out_min``/``out_max`` the extreme vertex out-rates r_x over x in Z_l.
    """

    def r_min(self, ell: int) -> float: ...
    def r_max(self, ell: int) -> float: ...
    def out_min(self, ell: int) -> float: ...
    def out_max(self, ell: int) -> float: ...

    def R_min(self, a: int, b: int) -> float:
        return math.fsum(1.0 / self.out_min(i) for i in range(a, b + 1))

    def R_max(self, a: int, b: int) -> float:
        return math.fsum(1.0 / self.out_max(i) for i in range(a, b + 1))

    def sum_log_R_max(self, a: int, b: int) -> float:
        """sum_{i=a}^b log R^max_i with R^max_i = 1 / out_max(i)."""
        return -math.fsum(math.log(self.out_max(i)) for i in range(a, b + 1))

    def sum_log_r_max(self, a: int, b: int) -> float:
        return math.fsum(math.log(self.r_max(i)) for i in range(a, b + 1))

    def rho(self, ell: int) -> float:
        return min(self.out_max(i) for i in range(ell + 1))

    def min_out(self, a: int, b: int) -> float:
        """min over a <= |x| <= b of r_x (inf on an empty range)."""
        if a > b:
            return math.inf
        return min(self.out_min(i) for i in range(a, b + 1))


class RegularProfile(Profile):
    """Closed-form aggregates of a symbolic family on the d-regular tree."""

    def __init__(self, family: RateFamily, d: int):
        if not family.symbolic:
            raise RateError("regular profiles need a symbolic family")
        self.family = family
        self.d = int(d)
        self.k = self.d - 1

    def r_min(self, ell):
        return self.family.gen_rate(ell)

    r_max = r_min

    def out_min(self, ell):
        return self.k * self.family.gen_rate(ell)

    out_max = out_min

    def _check(self, a, b):
        if a > b:
            return False
        if a < 0:
            raise RateError("generations are non-negative")
        return True

    def R_min(self, a, b):
        if not self._check(a, b):
            return 0.0
        f, k, n = self.family, self.k, b - a + 1
        if f.kind == "constant":
            return n / k
        if f.kind == "exponential":
            # sum_{i=a}^b q^(i+1) / k with q = d_f - 1 (the family's d may differ from the tree's)
            q = float(f.d - 1)
            try:
                return (q ** (b + 2) - q ** (a + 1)) / ((q - 1.0) * k)
            except OverflowError:
                return math.inf
        if f.kind == "polynomial":
            return _power_sum(f.p, a + 1, b + 1) / k
        return _numeric_sum(lambda i: 1.0 / (k * f.gen_rate(i)), a, b)

    R_max = R_min

    def sum_log_R_max(self, a, b):
        if not self._check(a, b):
            return 0.0
        f, lk, n = self.family, math.log(self.k), b - a + 1
        if f.kind == "constant":
            return -n * lk
        if f.kind == "exponential":
            return math.log(f.d - 1) * ((a + b) * n / 2.0 + n) - n * lk
        if f.kind == "polynomial":
            return f.p * (math.lgamma(b + 2) - math.lgamma(a + 1)) - n * lk
        return _numeric_sum(lambda i: -math.log(self.out_max(i)), a, b)

    def sum_log_r_max(self, a, b):
        if not self._check(a, b):
            return 0.0
        f, n = self.family, b - a + 1
        if f.kind == "constant":
            return 0.0
        if f.kind == "exponential":
            return -math.log(f.d - 1) * ((a + b) * n / 2.0 + n)
        if f.kind == "polynomial":
            return -f.p * (math.lgamma(b + 2) - math.lgamma(a + 1))
        return _numeric_sum(lambda i: math.log(f.gen_rate(i)), a, b)

    def rho(self, ell):
        return self.out_max(ell)

    def min_out(self, a, b):
        if a > b:
            return math.inf
        return self.out_min(b)


def _numeric_sum(fn, a: int, b: int, limit: int = 10_000_000) -> float:
    if b - a + 1 > limit:
        raise RateError(f"sum over {b - a + 1} generations has no closed form here")
    return math.fsum(fn(i) for i in range(a, b + 1))


def _power_sum(p: float, lo: int, hi: int) -> float:
    """sum_{j=lo}^{hi} j^p for 1 <= lo <= hi."""
    if hi - lo < 2_000_000:
        j = np.arange(lo, hi + 1, dtype=np.float64)
        return math.fsum(j ** p)
    import mpmath
    # Euler-Maclaurin; differences of Hurwitz zeta values stall for large arguments
    return float(mpmath.sumem(lambda j: j ** p, [lo, hi]))


@dataclass
class GenerationAggregates(Profile):
    """Aggregates tabulated on a materialised tree for generations 0..depth."""
    depth: int
    r_min_arr: np.ndarray
    r_max_arr: np.ndarray
    out_min_arr: np.ndarray
    out_max_arr: np.ndarray
    out_rate: dict

    def _idx(self, ell):
        if not 0 <= ell <= self.depth:
            raise RateError(f"generation {ell} is outside the tabulated range 0..{self.depth}")
        return ell

    def r_min(self, ell):
        return float(self.r_min_arr[self._idx(ell)])

    def r_max(self, ell):
        return float(self.r_max_arr[self._idx(ell)])

    def out_min(self, ell):
        return float(self.out_min_arr[self._idx(ell)])

    def out_max(self, ell):
        return float(self.out_max_arr[self._idx(ell)])

    @property
    def rho_arr(self) -> np.ndarray:
        return np.minimum.accumulate(self.out_max_arr)


def aggregates(family: RateFamily, tree: Tree, depth: int) -> GenerationAggregates:
    n = depth + 1
    rmin = np.full(n, np.inf)
    rmax = np.zeros(n)
    omin = np.full(n, np.inf)
    omax = np.zeros(n)
    out = {}
    for x in iter_bfs(tree, depth):
        g = tree.gen[x]
        rs = family.child_rates(tree, x)
        rx = math.fsum(rs)
        out[x] = rx
        rmin[g] = min(rmin[g], min(rs))
        rmax[g] = max(rmax[g], max(rs))
        omin[g] = min(omin[g], rx)
        omax[g] = max(omax[g], rx)
    return GenerationAggregates(depth, rmin, rmax, omin, omax, out)


def profile_for(family: RateFamily, law: OffspringLaw, tree: Tree | None = None,
                depth: int | None = None) -> Profile:
    """Closed forms on regular trees, tabulated aggregates otherwise."""
    if family.symbolic and law.is_dirac and (tree is None or not tree.overrides):
        return RegularProfile(family, law.support[0] + 1)
    if tree is None or depth is None:
        raise RateError("a materialised tree and depth are needed for this family/law")
    return aggregates(family, tree, depth)


# flows ----------------------------------------------------------------------------

@dataclass
class FlowReport:
    q: dict
    kind: str                  # flow | superflow | subflow | unclassified
    strength: float | None
    horizon: int
    level_sums: list

    @property
    def label(self) -> str:
        return f"flow({self.strength!r})" if self.kind == "flow" else self.kind


def net_flows(family: RateFamily, tree: Tree, horizon: int, exact: bool = False) -> dict:
    """q(x) for |x| < horizon; with ``exact`` the values are Fractions."""
    q = {}
    for x in iter_bfs(tree, horizon - 1):
        if exact:
            if family.symbolic:
                rx = family.gen_rate_exact(tree.gen[x]) * tree.child_count(x)
            else:
                rx = sum(Fraction(r) for r in family.child_rates(tree, x))
        else:
            rx = family.out_rate(tree, x)
        if x == Tree.ROOT:
            q[x] = rx
        else:
            p = tree.parent[x]
            if exact and family.symbolic:
                rin = family.gen_rate_exact(tree.gen[p])
            else:
                rin = family.edge_rate(tree, p, x)
                rin = Fraction(rin) if exact else rin
            q[x] = rx - rin
    return q


def _analytic_subflow(family: RateFamily, tree: Tree) -> bool:
    return (family.kind == "slowed" and tree.law.is_dirac and not tree.overrides
            and tree.law.support[0] == family.d - 1)


def classify_flow(family: RateFamily, tree: Tree, horizon: int,
                  tolerance: float | None = None) -> FlowReport:
    if tolerance is None:
        tolerance = 1e-10 if family.symbolic else 1e-8
    q = net_flows(family, tree, horizon)
    sums = [0.0] * horizon
    for x in q:
        sums[tree.gen[x]] += family.out_rate(tree, x)
    nonroot = [v for x, v in q.items() if x != Tree.ROOT]
    if all(abs(v) <= tolerance for v in nonroot):
        return FlowReport(q, "flow", q[Tree.ROOT], horizon, sums)
    if all(v >= -tolerance for v in nonroot):
        return FlowReport(q, "superflow", None, horizon, sums)
    decreasing = all(b < a for a, b in zip(sums, sums[1:]))
    if _analytic_subflow(family, tree) or (decreasing and sums[-1] < tolerance):
        return FlowReport(q, "subflow", None, horizon, sums)
    return FlowReport(q, "unclassified", None, horizon, sums)


def superflow_decomposition(family: RateFamily, tree: Tree, depth: int,
                            tolerance: float = 1e-10) -> dict:
    """Split the rates on generations < depth into flows r^z, one per source z.

    Sources are processed root first; each vertex forwards its inflow to its
    children in proportion to the residual edge capacities.  Returns
    ``{z: {(x, y): rate}}``.
    """
    q = net_flows(family, tree, depth)
    residual = {}
    for x in iter_bfs(tree, depth - 1):
        for y, r in zip(tree.ensure_children(x), family.child_rates(tree, x)):
            residual[(x, y)] = r
    flows = {}
    for z in iter_bfs(tree, depth - 1):
        qz = q[z]
        if qz < -tolerance:
            raise DecompositionError(f"net flow q({z}) = {qz!r} < 0: rates are not a superflow")
        if qz <= tolerance:
            continue
        fz = {}
        stack = [(z, qz)]
        while stack:
            v, inflow = stack.pop()
            if tree.gen[v] >= depth:
                continue
            ch = tree.ensure_children(v)
            caps = [residual[(v, c)] for c in ch]
            total = math.fsum(caps)
            if inflow > total * (1 + 1e-12) + tolerance:
                raise DecompositionError(
                    f"flow from {z} needs {inflow!r} out of {v} but only {total!r} remains")
            if total <= 0.0:
                continue
            for c, cap in zip(ch, caps):
                amt = inflow * (cap / total)
                left = cap - amt
                if left < -tolerance:
                    raise DecompositionError(f"residual capacity on ({v}, {c}) went negative")
                residual[(v, c)] = max(left, 0.0)
                fz[(v, c)] = amt
                stack.append((c, amt))
        flows[z] = fz
    return flows
