"""Closed-form disentanglement, time-window and generation-window bounds.

Generations coming out of the disentanglement bound are real numbers; the
window formulas use the integer generation M = ceil(M_n).  Natural logs
throughout except where a base is written out (log2, log_{1+eps}).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .rates import (LOG_ORDER, SUPER_LOG, Profile, RateError, RateFamily,
                    RegularProfile, aggregates, check_ED, check_UE, profile_for)
from .tree import OffspringLaw, Tree, TreeStats, tree_stats

UNBOUNDED = math.inf


class BoundError(ValueError):
    pass


class Unclassifiable(BoundError):
    pass


def first_true(pred, lo: int = 0, hi: int | None = None) -> int:
    """Smallest k >= lo with pred(k), for a predicate that switches once from False to True."""
    if pred(lo):
        return lo
    step, prev = 1, lo
    while True:
        k = lo + step
        if hi is not None and k > hi:
            k = hi
            if not pred(k):
                raise BoundError(f"predicate never holds on [{lo}, {hi}]")
            break
        if pred(k):
            break
        prev, step = k, step * 2
    a, b = prev, k          # pred(a) False, pred(b) True
    while b - a > 1:
        mid = (a + b) // 2
        if pred(mid):
            b = mid
        else:
            a = mid
    return b


def last_true(pred, lo: int = 0) -> int:
    """Largest k >= lo with pred(k) for a predicate that switches once from True to False."""
    return first_true(lambda k: not pred(k), lo) - 1


# constants ----------------------------------------------------------------------

def compute_c_o(stats: TreeStats, p1: float | None = None) -> float:
    if stats.d_min > 1:
        return 1.0 / math.log(stats.d_min)
    p1 = stats.p1 if p1 is None else p1
    if not 0.0 < p1 < 1.0:
        raise BoundError("c_o needs p_1 in (0, 1) when d_min = 1")
    if stats.m_tilde is None:
        raise BoundError("c_o needs p_k > 0 for some k >= 2")
    return (5.0 + math.log2(stats.m_tilde)) / (math.log(1.0 + p1) - math.log(2.0 * p1))


def compute_D_n(family: RateFamily, n: int, c_low: float, c_o: float,
                profile: Profile | None = None, horizon: int | None = None) -> float:
    """Smallest m >= 1 with r^max_l <= n^-(2 + c_low c_o) log(n)^-3 for every l >= m."""
    if n < 2:
        raise BoundError("D_n needs n >= 2")
    log_thr = -(2.0 + c_low * c_o) * math.log(n) - 3.0 * math.log(math.log(n))

    if family.symbolic:
        if family.kind == "constant" or (family.kind == "slowed" and family.d == 2):
            return UNBOUNDED

        def ok(m):
            r = family.gen_rate(m)
            return r == 0.0 or math.log(r) <= log_thr
        return float(first_true(ok, 1))

    if profile is None or horizon is None:
        raise Unclassifiable("custom rates need a tabulated profile and a horizon")
    r = [profile.r_max(ell) for ell in range(horizon + 1)]
    if any(b > a for a, b in zip(r, r[1:])):
        raise Unclassifiable("custom r^max is not monotone: D_n cannot be read off a finite horizon")
    for m in range(1, horizon + 1):
        if math.log(r[m]) <= log_thr:
            return float(m)
    raise Unclassifiable(f"the defining inequality never holds up to generation {horizon}")


@dataclass(frozen=True)
class DisentanglementBound:
    n: int
    D_n: float
    M_n: float
    delta: float
    c_o: float
    epsilon: float
    c_low: float
    case_used: int

    @property
    def generation(self) -> int:
        return math.ceil(self.M_n)


def compute_M_n(n: int, D_n: float, d_min: int, c_o: float, epsilon: float, delta: float,
                decay_class: str | None, c_low: float = math.nan) -> DisentanglementBound:
    if decay_class is None:
        raise BoundError("the rate family does not declare a decay class")
    if decay_class == LOG_ORDER:
        if math.isinf(D_n):
            raise BoundError("log-order decay class with unbounded D_n")
        log_eps_n = math.log(n) / math.log(1.0 + epsilon)
        if d_min > 1:
            M = d_min / (d_min - 1) * D_n + (2.0 + delta) * log_eps_n
        else:
            M = (c_o + 1.0) * D_n + c_o * (2.0 + delta) * log_eps_n
        case = 1
    elif decay_class == SUPER_LOG:
        coef = (c_o if d_min == 1 else 1.0 / (d_min - 1)) + 1.0 + delta
        M = coef * min(D_n, n)
        case = 2
    else:
        raise BoundError(f"unknown decay class {decay_class!r}")
    return DisentanglementBound(n, D_n, M, delta, c_o, epsilon, c_low, case)


# bound context -------------------------------------------------------------------

@dataclass
class TimeWindow:
    n: int
    ell: int
    delta: float
    M: int
    t_low: float
    t1_low: float
    t2_low: float
    t_up: float
    theta: float
    theta_hat: float
    theta_n: float


@dataclass
class GenerationWindow:
    t: float
    n_t: int
    L_low: float
    L_up: int
    L1_up: int
    L2_up: int


@dataclass
class BoundContext:
    """Everything the closed-form bounds need for one (law, family) pair."""
    family: RateFamily
    stats: TreeStats
    epsilon: float
    kappa: float
    c_low: float
    c_o: float
    delta: float
    profile: Profile
    horizon: int | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def D(self, n: int) -> float:
        return compute_D_n(self.family, n, self.c_low, self.c_o, self.profile, self.horizon)

    def bound(self, n: int) -> DisentanglementBound:
        key = ("M", n)
        if key not in self._cache:
            self._cache[key] = compute_M_n(n, self.D(n), self.stats.d_min, self.c_o,
                                           self.epsilon, self.delta,
                                           self.family.decay_class, self.c_low)
        return self._cache[key]

    def M(self, n: int) -> float:
        """M_n, with the convention M_1 = 0 (a single particle is never entangled)."""
        if n < 1:
            raise BoundError("M_n needs n >= 1")
        return 0.0 if n == 1 else self.bound(n).M_n

    # time window ------------------------------------------------------------
    def time_window(self, n: int, ell: int, theta: float | None = None,
                    theta_n: float | str | None = None) -> TimeWindow:
        if n < 1:
            raise BoundError("the time window needs n >= 1")
        Mn = self.M(n)
        if ell < Mn:
            raise BoundError(f"ell_n = {ell} is below M_n = {Mn!r}")
        M = math.ceil(Mn)
        pr, d = self.profile, self.delta
        R0 = pr.R_max(0, ell)
        rho = pr.rho(ell)
        t1 = R0 * (1.0 - 2.0 * (R0 * rho) ** (-1.0 / 3.0) * math.log(R0))
        t2 = ell / 2.0 * math.exp(pr.sum_log_R_max(0, ell) / (ell + 1))
        Rmin = pr.R_min(M, ell)
        theta_hat = pr.min_out(M + 1, ell) * Rmin
        th = theta_hat if theta is None else theta
        if theta_n is None:
            theta_n = 1.0 / math.log(n) if n > 1 else 1.0
        elif theta_n == "adaptive":
            # admissible: theta_hat / theta_n = sqrt(theta_hat) -> infinity
            theta_n = theta_hat ** -0.5 if math.isfinite(theta_hat) else 1.0 / math.log(max(n, 2))
        if math.isinf(th):
            factor = 1.0 + theta_n
        else:
            factor = 1.0 + d - 2.0 * math.log(d) / (th * d)
        t_up = 5.0 * (n + M) / pr.min_out(0, M) + factor * Rmin
        return TimeWindow(n, ell, d, M, max(t1, t2), t1, t2, t_up, th, theta_hat, theta_n)

    # generation window ---------------------------------------------------------
    def _nt_lhs(self, n: int) -> float:
        if n == 0:
            return 0.0
        Mn = self.M(n)
        return (n + Mn) / self.profile.min_out(0, math.ceil(Mn))

    def n_t(self, t: float) -> int:
        if t <= 0:
            raise BoundError("n_t needs t > 0")
        return last_true(lambda n: self._nt_lhs(n) <= t, 0)

    def generation_window(self, t: float) -> GenerationWindow:
        if t <= math.e:
            raise BoundError("the generation window needs t > e")
        nt = self.n_t(t)
        L_low = self.M(nt) if nt >= 1 else 0.0
        target = math.log(t) + 2.0
        pr = self.profile
        hi = self.horizon if not isinstance(pr, RegularProfile) else None

        def g1(ell):
            return math.log(ell) - pr.sum_log_r_max(1, ell) / (ell + 1) >= target

        def g2(ell):
            return pr.R_max(0, ell) >= t + t ** (2.0 / 3.0)

        if self.family.decreasing and hi is None:
            L1 = first_true(g1, 1)
            L2 = first_true(g2, 0)
        else:
            L1 = _scan(g1, 1, hi)
            L2 = _scan(g2, 0, hi)
        return GenerationWindow(t, nt, L_low, min(L1, L2), L1, L2)


def _scan(pred, lo, hi):
    if hi is None:
        raise BoundError("a finite horizon is needed to scan tabulated aggregates")
    for k in range(lo, hi + 1):
        if pred(k):
            return k
    raise BoundError(f"window edge lies beyond the tabulated horizon {hi}")


def context(family: RateFamily, law: OffspringLaw, delta: float = 0.1,
            tree: Tree | None = None, depth: int | None = None,
            c_low: float | None = None, epsilon: float | None = None) -> BoundContext:
    stats = tree_stats(law)
    if epsilon is None:
        if family.symbolic:
            epsilon = 1.0
        else:
            if tree is None or depth is None:
                raise BoundError("custom rates need a tree and depth for the UE constant")
            epsilon = check_UE(family, tree, depth)[1]
    _, kappa, cl = check_ED(family, depth or 50, tree)
    if c_low is not None:
        cl = c_low
    prof = profile_for(family, law, tree, depth)
    return BoundContext(family, stats, epsilon, kappa, cl, compute_c_o(stats), delta, prof,
                        None if isinstance(prof, RegularProfile) else depth)


# module-level entry points ------------------------------------------------------------

def compute_time_window(ctx: BoundContext, n: int, ell: int, theta=None, theta_n=None) -> TimeWindow:
    return ctx.time_window(n, ell, theta, theta_n)


def compute_n_t(ctx: BoundContext, t: float) -> int:
    return ctx.n_t(t)


def compute_generation_window(ctx: BoundContext, t: float) -> GenerationWindow:
    return ctx.generation_window(t)


def a_priori_disentanglement(n: int, m: int, epsilon: float, d_T: int,
                             min_branching: int | None = None) -> float:
    """Lower bound 1 - n^2 (1+eps)^-F_n(m) on the probability of disentanglement by m.

    F_n(m) = m - ceil(n / (d_T - 1)) for d_T >= 2; for d_T = 1 it is
    ``min_branching - n`` where min_branching = min_x F(o, x) over |x| = m.
    """
    if d_T >= 2:
        F = m - math.ceil(n / (d_T - 1))
    else:
        if min_branching is None:
            raise BoundError("d_T = 1 needs min over |x| = m of F(o, x)")
        F = min_branching - n
    return 1.0 - n * n * (1.0 + epsilon) ** (-F)


def exp_regular_window(c_up: float, t: float, delta: float) -> tuple[int, float]:
    """Refined window (L_up, L_low) for exponentially decaying rates on a regular tree."""
    if t <= math.e:
        raise BoundError("needs t > e")
    lt = math.log(t)
    return math.ceil(lt / c_up * (1.0 + lt ** (-1.0 / 3.0))), (1.0 - delta) / c_up * lt


def renewal_bound(ell: int, c: float, kappa: float, c_low: float) -> tuple[float, float]:
    """(threshold, probability): P(psi_o > threshold | D_o <= ell) <= probability."""
    thr = (1.0 + c) * (ell + 1) / kappa * math.exp(c_low * (ell + 1))
    return thr, math.exp(-(c - math.log(1.0 + c)) * ell)


def e_family_n0(ctx: BoundContext, n_max: int = 10_000, ell_rule=None) -> int:
    """Smallest n0 with t_low < t_up for every n0 <= n <= n_max (ell_n = ceil(M_n) by default)."""
    rule = ell_rule or (lambda n: math.ceil(ctx.M(n)))
    n0 = None
    for n in range(2, n_max + 1):
        w = ctx.time_window(n, rule(n))
        if w.t_low < w.t_up:
            n0 = n if n0 is None else n0
        else:
            n0 = None
    if n0 is None:
        raise BoundError(f"t_low < t_up fails at n_max = {n_max}")
    return n0


# regular trees with polynomial rates -------------------------------------------------

@dataclass
class PolyWindowReport:
    a: float
    b: float
    regime: str            # "sharp" (t_up / t_low -> 1) or "bounded"
    coefficient: float     # (1 - a) / ((d - 1)(1 + p))
    exponent_M: float      # M_n grows like n^exponent_M
    d: int
    p: float
    c: float

    def leading(self, n: float) -> float:
        """Leading term (1 - a) ell_n^(p+1) / ((d-1)(1+p)) with ell_n = n^c."""
        return self.coefficient * n ** (self.c * (self.p + 1.0))


def regular_poly_window(d: int, p: float, c: float, delta: float = 0.1,
                        c_low: float | None = None, tol: float = 1e-12) -> PolyWindowReport:
    """Limits a = lim M_n / ell_n^p and b = lim n M_n^p / ell_n^(p+1) for ell_n = n^c."""
    if d < 3:
        raise BoundError("needs d >= 3")
    c_o = 1.0 / math.log(d - 1)
    c_low = p * math.log(2.0) if c_low is None else c_low
    kM = 1.0 / (d - 2) + 1.0 + delta
    eD = (2.0 + c_o * c_low) / p          # D_n ~ n^eD up to log factors
    eM = min(eD, 1.0)
    log_factor = eD < 1.0                 # M_n ~ D_n carries a log^(3/p) factor

    def limit(expo, value):
        if expo < -tol:
            return 0.0
        if expo > tol or log_factor:
            return math.inf
        return value

    a = limit(eM - c * p, kM)
    b = limit(1.0 + p * eM - c * (p + 1.0), kM ** p)
    if a >= 1.0:
        raise BoundError(f"a = {a!r} >= 1: ell_n does not dominate M_n")
    if math.isinf(b):
        raise BoundError("b is infinite for this ell_n rule")
    return PolyWindowReport(a, b, "sharp" if b == 0.0 else "bounded",
                            (1.0 - a) / ((d - 1) * (1.0 + p)), eM, d, p, c)


def late_arrival_bound(profile: Profile, lam: float, ell: int, t: float) -> float:
    """Bound on P(some particle reaches generation ell by time t).

    At most Poisson(lam t) particles enter by t, and by the walker comparison
    each needs at least sum_{i<ell} omega_i / max r_x (over Z_i) to reach
    generation ell.  The walk time exceeds each of its terms, so
    P(sum <= t) <= prod_i (1 - exp(-t max r_x)).
    """
    if ell <= 0:
        return 1.0
    logp = math.fsum(math.log(-math.expm1(-t * profile.out_max(i))) for i in range(ell))
    return min(1.0, lam * t * math.exp(logp))
