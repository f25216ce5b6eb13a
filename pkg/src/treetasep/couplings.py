"""Pathwise comparisons between TASEP and related systems on shared randomness.

* :func:`canonical_pair` runs two TASEPs on the same edge streams, the second
  with an extra root stream, and certifies occupancy ordering.
* :func:`irw_pair` couples TASEP with independent walkers through
  per-(particle, generation) opportunity streams of rate M_l, the largest
  out-rate in generation l.  The walker jumps at every opportunity; the TASEP
  particle picks child y with probability r_{x,y} / M_l and jumps if y is
  empty, so its attempts form independent rate-r_{x,y} clocks.
* :func:`slowed_real_pair` builds the slowed TASEP from the residual waits of
  the real one, so each slowed particle lags its real counterpart.
* :func:`slowed_passage_times` computes the slowed passage times of the
  lattice picture, either by event simulation or by the max-plus recursion.
"""
from __future__ import annotations

import heapq
import math
from array import array
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _hashing as hs
from .engine import ENTRY, JUMP, SHARED_STREAM, EngineError, EventLog, Horizon, SimConfig, run
from .lpp import LppEnvironment, build_env
from .rates import Profile, RateFamily, RegularProfile, aggregates
from .streams import Stream
from .tree import Tree


class CouplingViolation(AssertionError):
    def __init__(self, event_index: int, detail: str):
        super().__init__(f"ordering fails after event {event_index}: {detail}")
        self.event_index = event_index
        self.detail = detail


@dataclass
class Certificate:
    holds: list

    @property
    def ok(self) -> bool:
        return all(self.holds)

    @property
    def violations(self) -> int:
        return len(self.holds) - sum(self.holds)

    def first_violation(self) -> int | None:
        for k, h in enumerate(self.holds):
            if not h:
                return k
        return None

    def lines(self) -> list[str]:
        return ["event_index,holds"] + [f"{k},{int(h)}" for k, h in enumerate(self.holds)]

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n")


@dataclass
class CoupledRun:
    kind: str
    first: EventLog
    second: EventLog
    certificate: Certificate


def _merged(logs) -> list[tuple[float, int, int]]:
    """(t, process, index) for all events, time-ordered, stable across processes."""
    ev = [(t, p, k) for p, log in enumerate(logs) for k, t in enumerate(log.t.tolist())]
    ev.sort()
    return ev


def _certify(events, apply, check, strict: bool) -> Certificate:
    """Apply events group by group (equal times together) and check after each group."""
    holds = []
    k = 0
    while k < len(events):
        t = events[k][0]
        g = k
        while g < len(events) and events[g][0] == t:
            apply(events[g])
            g += 1
        ok, detail = check()
        if not ok and strict:
            raise CouplingViolation(g - 1, detail)
        holds.extend([ok] * (g - k))
        k = g
    return Certificate(holds)


# canonical coupling ---------------------------------------------------------------

def canonical_pair(tree: Tree, family: RateFamily, lam1: float, lam2: float, seed: int,
                   T: float, initial1=(), initial2=(), strict: bool = True,
                   max_events: int = 10_000_000) -> CoupledRun:
    """Two TASEPs on shared streams with reservoirs lam1 <= lam2."""
    if not 0 <= lam1 <= lam2 or lam2 <= 0:
        raise EngineError("need 0 <= lam1 <= lam2 and lam2 > 0")
    if not set(initial1) <= set(initial2):
        raise EngineError("initial configurations are not ordered")
    stop = Horizon(T)
    common = dict(tree=tree, family=family, stop=stop, seed=seed, clock=SHARED_STREAM,
                  max_events=max_events)
    if lam1 > 0:
        c1 = SimConfig(lam=lam1, initial=tuple(initial1), root_streams=(("A", lam1),), **common)
    else:
        # no reservoir: close it before the first entry
        c1 = SimConfig(lam=lam2, initial=tuple(initial1), root_streams=(), max_entries=0, **common)
    roots = (("A", lam1), ("B", lam2 - lam1)) if lam1 > 0 else (("B", lam2),)
    c2 = SimConfig(lam=lam2, initial=tuple(initial2), root_streams=roots, **common)
    _, log1 = run(c1)
    _, log2 = run(c2)
    logs = (log1, log2)
    occ = (set(initial1), set(initial2))
    bad = [len(occ[0] - occ[1])]

    def apply(ev):
        _, p, k = ev
        log = logs[p]
        s, d = int(log.src[k]), int(log.dst[k])
        for x, add in ((s, False), (d, True)):
            if x < 0:
                continue
            before = x in occ[0] and x not in occ[1]
            (occ[p].add if add else occ[p].discard)(x)
            after = x in occ[0] and x not in occ[1]
            bad[0] += int(after) - int(before)

    def check():
        if bad[0] == 0:
            return True, ""
        return False, f"sites {sorted(occ[0] - occ[1])} occupied only in the lower process"

    cert = _certify(_merged(logs), apply, check, strict)
    return CoupledRun("canonical", log1, log2, cert)


# per-particle opportunity TASEP --------------------------------------------------------

class _OpportunityTasep:
    """TASEP in which particle i at generation l reads its own stream (i, l).

    ``opp_rate(x, l)`` is the stream rate at x; at each ring the particle
    picks child y with probability r_{x,y} / opp_rate (possibly none).
    """

    def __init__(self, tree, family, lam, seed, T, opp_rate, initial=()):
        self.tree, self.fam, self.lam, self.T = tree, family, lam, T
        self.opp_rate = opp_rate
        self.base = hs.derive("opportunity", seed)
        self.root = Stream(hs.derive(self.base, "root"), lam)
        self.occ = {}
        self.pos = []
        self.arrive = []          # particle -> list of arrival times per generation visited
        self.cursor = {}          # particle -> (stream, k, j, vertex)
        self.heap = []
        self.seq = 0
        self.log = (array("d"), array("b"), array("q"), array("q"), array("q"))
        self.initial = tuple(initial)
        self.rates = {}
        for x in self.initial:
            i = len(self.pos)
            self.occ[x] = i
            self.pos.append(x)
            self.arrive.append({tree.gen[x]: 0.0})
            self._start(i, x, 0.0)
        self.root_ver = 0
        if Tree.ROOT not in self.occ:
            self._schedule_root(0.0)

    def stream(self, i: int, ell: int, rate: float) -> Stream:
        return Stream(hs.derive(self.base, "p", i, ell), rate)

    def child_rates(self, x):
        r = self.rates.get(x)
        if r is None:
            ch = self.tree.ensure_children(x)
            r = self.rates[x] = (ch, self.fam.child_rates(self.tree, x))
        return r

    def _push(self, t, kind, i, ver):
        self.seq += 1
        heapq.heappush(self.heap, (t, self.seq, kind, i, ver))

    def _schedule_root(self, t):
        self.root_ver += 1
        s, _, _ = self.root.first_after(t)
        self._push(s, "r", -1, self.root_ver)

    def _start(self, i, x, a):
        ell = self.tree.gen[x]
        st = self.stream(i, ell, self.opp_rate(x, ell))
        s, k, j = st.first_after(0.0)
        self.cursor[i] = (st, k, j, a)
        self._push(a + s, "o", i, (x, k, j))

    def _record(self, t, kind, i, s, d):
        for col, v in zip(self.log, (t, kind, i, s, d)):
            col.append(v)

    def run(self, max_events: int = 10_000_000) -> EventLog:
        tree, occ, heap = self.tree, self.occ, self.heap
        n = 0
        while heap and heap[0][0] <= self.T:
            t, _, kind, i, ver = heapq.heappop(heap)
            if kind == "r":
                if ver != self.root_ver or Tree.ROOT in occ:
                    continue
                i = len(self.pos)
                occ[Tree.ROOT] = i
                self.pos.append(Tree.ROOT)
                self.arrive.append({0: t})
                self._record(t, ENTRY, i, -1, Tree.ROOT)
                self._start(i, Tree.ROOT, t)
            else:
                x, k, j = ver
                st, _, _, a = self.cursor[i]
                ell = tree.gen[x]
                u = hs.uniform(hs.derive(self.base, "pick", i, ell, k, j)) * st.rate
                ch, rs = self.child_rates(x)
                y = -1
                for c, r in zip(ch, rs):
                    if u < r:
                        y = c
                        break
                    u -= r
                if y >= 0 and y not in occ:
                    del occ[x]
                    occ[y] = i
                    self.pos[i] = y
                    self.arrive[i][ell + 1] = t
                    self._record(t, JUMP, i, x, y)
                    self._start(i, y, t)
                    if x == Tree.ROOT:
                        self._schedule_root(t)
                else:
                    s, k2, j2 = st.after(k, j)
                    self._push(a + s, "o", i, (x, k2, j2))
            n += 1
            if n >= max_events:
                raise EngineError("event cap reached in coupled run")
        return EventLog(tree, *self.log, initial=self.initial, horizon=self.T)


def walk_rates(family: RateFamily, tree: Tree, profile: Profile | None = None, depth: int = 60):
    """l -> M_l = max_{x in Z_l} r_x, the walker jump rate.

    On a d-regular tree with symbolic rates this is exact; for symbolic rates
    on other trees the largest offspring count in the support is used, which
    can only speed the walkers up.  Custom rates use aggregates to ``depth``.
    """
    if profile is not None:
        return profile.out_max
    law = tree.law
    if family.symbolic:
        if law.is_dirac and not tree.overrides:
            return RegularProfile(family, law.support[0] + 1).out_max
        kmax = max(law.support + tuple(tree.overrides.values()))
        return lambda ell: kmax * family.gen_rate(ell)
    return aggregates(family, tree, depth).out_max


def irw_pair(tree: Tree, family: RateFamily, lam: float, seed: int, T: float,
             profile: Profile | None = None, initial=(), strict: bool = True) -> CoupledRun:
    """TASEP and independent walkers with |z_i(t)| <= |z~_i(t)| pathwise."""
    M = walk_rates(family, tree, profile)
    cache = {}

    def rate(x, ell):
        v = cache.get(ell)
        if v is None:
            v = cache[ell] = M(ell)
        return v

    sim = _OpportunityTasep(tree, family, lam, seed, T, rate, initial)
    tlog = sim.run()
    # walkers: same streams, every ring is a jump to a uniform child
    cols = ([], [], [], [], [])
    starts = [(0.0, x, i, False) for i, x in enumerate(initial)]
    starts += [(t, d, p, True) for t, k, p, d in zip(tlog.t.tolist(), tlog.kind.tolist(),
                                                     tlog.particle.tolist(), tlog.dst.tolist())
               if k == ENTRY]
    for a, x, i, entered in starts:
        if entered:
            for c, v in zip(cols, (a, ENTRY, i, -1, x)):
                c.append(v)
        t = a
        while True:
            ell = tree.gen[x]
            s, _, _ = sim.stream(i, ell, rate(x, ell)).first_after(0.0)
            t = t + s
            if t > T:
                break
            ch = tree.ensure_children(x)
            u = hs.uniform(hs.derive(sim.base, "walk", i, ell))
            y = ch[min(int(u * len(ch)), len(ch) - 1)]
            for c, v in zip(cols, (t, JUMP, i, x, y)):
                c.append(v)
            x = y
    order = sorted(range(len(cols[0])), key=lambda k: (cols[0][k], cols[2][k]))
    wlog = EventLog(tree, *[[c[k] for k in order] for c in cols], initial=tuple(initial), horizon=T)

    gen_t = {i: tree.gen[x] for i, x in enumerate(initial)}
    gen_w = dict(gen_t)
    logs = (tlog, wlog)
    bad = set()

    def apply(ev):
        _, p, k = ev
        log = logs[p]
        i = int(log.particle[k])
        g = int(log.dst_gen[k])
        (gen_t if p == 0 else gen_w)[i] = g
        if i in gen_t and (i not in gen_w or gen_t[i] > gen_w[i]):
            bad.add(i)
        else:
            bad.discard(i)

    def check():
        if not bad:
            return True, ""
        i = min(bad)
        return False, f"particle {i} is at generation {gen_t[i]} but its walker at {gen_w.get(i)}"

    cert = _certify(_merged(logs), apply, check, strict)
    return CoupledRun("irw", tlog, wlog, cert)


# slowed TASEP ----------------------------------------------------------------------------

@dataclass
class SlowedRealRun:
    real: EventLog
    real_arrivals: list      # particle -> {generation: time}
    slowed_arrivals: list    # particle -> {generation: time}, only times <= T
    certificate: Certificate


def slowed_real_pair(tree: Tree, family: RateFamily, lam: float, seed: int, T: float,
                     profile: Profile | None = None, rtol: float = 1e-12,
                     strict: bool = True) -> SlowedRealRun:
    """Real TASEP and the slowed TASEP read off its residual waits.

    Particle i's slowed move out of generation l becomes possible at
    s = max(its slowed arrival at l, slowed departure of particle i-1 from
    l+1); the real stream of (i, l) then rings at some u > s and the slowed
    wait is r_x (u - s) / r_min(l), an Exp(1) / r_min(l) variable.  The
    rescaling can round, so slowed-after-real is checked up to ``rtol``.
    """
    if profile is None:
        if family.symbolic:
            rmin = family.gen_rate
        else:
            rmin = aggregates(family, tree, 60).r_min
    else:
        rmin = profile.r_min
    sim = _OpportunityTasep(tree, family, lam, seed, T,
                            lambda x, ell: family.out_rate(tree, x))
    log = sim.run()
    real = sim.arrive
    path = {}
    for k, p, d in zip(log.kind.tolist(), log.particle.tolist(), log.dst.tolist()):
        path.setdefault(p, []).append(d)
    slowed = []
    for i in range(len(real)):
        sa = {}
        g = 0
        # entry: the root must have been left by particle i - 1
        s = 0.0 if i == 0 else slowed[i - 1].get(1, math.inf)
        if i > 0 and s > T:
            slowed.append(sa)
            continue
        u, _, _ = sim.root.first_after(s) if i > 0 else sim.root.first_after(0.0)
        ta = s + (lam * (u - s)) / lam
        if ta > T:
            slowed.append(sa)
            continue
        sa[0] = ta
        while True:
            blocker = slowed[i - 1].get(g + 2, math.inf) if i > 0 else 0.0
            s = max(sa[g], blocker)
            if s > T or g >= len(path[i]):
                break
            x = path[i][g]
            if g + 1 not in real[i]:
                # the real particle has not left x by T, so neither has the slowed one
                break
            rx = family.out_rate(tree, x)
            st = sim.stream(i, g, rx)
            off, _, _ = st.first_after(s - real[i][g])
            u = real[i][g] + off
            w = rx * (u - s)
            ta = s + w / rmin(g)
            if ta > T:
                break
            sa[g + 1] = ta
            g += 1
        slowed.append(sa)

    events = sorted((t, i, g) for i, sa in enumerate(slowed) for g, t in sa.items())
    holds = []
    for k, (t, i, g) in enumerate(events):
        r = real[i].get(g, math.inf)
        ok = r <= t * (1 + rtol) + rtol
        if not ok and strict:
            raise CouplingViolation(k, f"slowed particle {i} reached generation {g} at {t!r}, "
                                       f"before the real one ({r!r})")
        holds.append(ok)
    return SlowedRealRun(log, real, slowed, Certificate(holds))


def slowed_passage_times(n: int, m: int, M_n: int, lam: float, rmin, seed: int,
                         method: str = "events", env: LppEnvironment | None = None):
    """Slowed passage times in lattice coordinates, G~[i, j] with i = j + generation.

    Particle j moving into generation g is cell (j + g, j).  The environment
    is ``build_env(n + M_n, n, lam, rmin, seed)`` unless given.  Cells for
    particles 1..n and generations 0..min(M_n, m + n - j) are filled, the
    rest are NaN.  Returns (table, env).
    """
    if m > M_n:
        raise ValueError("need m <= M_n")
    if env is None:
        env = build_env(n + M_n, n, lam, rmin, seed)
    W = env.W.tolist()
    G = np.full(env.W.shape, np.nan)
    gmax = {j: min(M_n, m + n - j) for j in range(1, n + 1)}

    def deps(j, g):
        out = []
        if g >= 1:
            out.append((j, g - 1))
        elif j >= 2:
            out.append((j - 1, 0))
        if j >= 2 and g + 1 <= M_n:
            out.append((j - 1, g + 1))
        return out

    def value(done, j, g):
        ds = [done[d] for d in deps(j, g)]
        if not ds:
            best = 0.0
        elif len(ds) == 1:
            best = ds[0]
        else:
            best = ds[0] if ds[0] >= ds[1] else ds[1]
        return best + W[j + g][j]

    done = {}
    if method == "recursion":
        for j in range(1, n + 1):
            for g in range(gmax[j] + 1):
                done[(j, g)] = value(done, j, g)
    elif method == "events":
        nodes = {(j, g) for j in range(1, n + 1) for g in range(gmax[j] + 1)}
        waiting = {v: len(deps(*v)) for v in nodes}
        dependents = {v: [] for v in nodes}
        for v in nodes:
            for d in deps(*v):
                dependents[d].append(v)
        heap = []
        for v, c in waiting.items():
            if c == 0:
                heapq.heappush(heap, (value(done, *v), v))
        while heap:
            t, v = heapq.heappop(heap)
            done[v] = t
            for u in dependents[v]:
                waiting[u] -= 1
                if waiting[u] == 0:
                    heapq.heappush(heap, (value(done, *u), u))
        if len(done) != len(nodes):
            raise AssertionError("slowed system deadlocked")
    else:
        raise ValueError(f"unknown method {method!r}")
    for (j, g), t in done.items():
        G[j + g, j] = t
    return G, env


# exponential sums --------------------------------------------------------------------------

def exp_sum_tail(c, t: float, delta: float) -> dict:
    """Bounds on P(sum_i omega_i / c_i <= t) for i.i.d. Exp(1) omega_i, i = 0..l.

    ``upper2`` is exp(l (1 + log(t / l)) + sum_i log c_i) and is reported as
    inf for l = 0, where it is not defined.
    """
    c = np.asarray(c, dtype=np.float64)
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if c.size == 0 or np.any(c <= 0):
        raise ValueError("all c_i must be positive")
    ell = c.size - 1
    S = math.fsum(1.0 / c)
    cm = float(c.min())
    lower = 1.0 - math.exp(-delta * cm * t - cm * S * math.log1p(-delta))
    upper1 = math.exp(delta * cm * t - cm * S * math.log1p(delta))
    if ell == 0 or t <= 0:
        upper2 = math.inf if ell == 0 else 0.0
    else:
        upper2 = math.exp(min(ell * (1.0 + math.log(t / ell)) + math.fsum(np.log(c)), 700.0))
    return {"lower": lower, "upper1": upper1, "upper2": upper2, "S": S, "c": cm}
