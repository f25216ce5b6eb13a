"""Event-driven simulation of TASEP on a rooted tree fed by a root reservoir.

Two clock modes share one state model:

``next_reaction``
    Direct-method sampling.  Each particle's currently enabled out-rate sits
    in a leaf of a sum tree whose inner nodes are recomputed (never patched
    with differences), so rates spanning many orders of magnitude keep full
    relative precision.  Together with memorylessness this samples exactly
    the competing exponential clocks of the generator.

``shared_stream``
    Every edge carries a fixed Poisson stream (see :mod:`treetasep.streams`)
    keyed by the path of its lower endpoint; the root carries one stream per
    reservoir component.  Two runs on the same keys are pathwise coupled.

Particles may exit from generation ``exit_depth`` at rate r_x; this is how
finite truncations are simulated.
"""
from __future__ import annotations

import heapq
import math
from array import array
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _hashing as hs
from .rates import RateFamily
from .streams import Stream
from .tree import Tree

ENTRY, JUMP, EXIT = 0, 1, 2
KIND_NAMES = {ENTRY: "E", JUMP: "J", EXIT: "X"}
KIND_CODES = {v: k for k, v in KIND_NAMES.items()}
NEXT_REACTION, SHARED_STREAM = "next_reaction", "shared_stream"


class EngineError(ValueError):
    pass


class NotReached(LookupError):
    pass


class NotYet(LookupError):
    pass


class NotObserved(LookupError):
    pass


@dataclass(frozen=True)
class StopRule:
    kind: str               # horizon | entries | crossings
    T: float | None = None
    n: int | None = None
    m: int | None = None


def Horizon(T: float) -> StopRule:
    return StopRule("horizon", T=float(T))


def Entries(n: int) -> StopRule:
    return StopRule("entries", n=int(n))


def Crossings(n: int, m: int) -> StopRule:
    """Stop once n particles have reached generation m."""
    return StopRule("crossings", n=int(n), m=int(m))


@dataclass
class SimConfig:
    tree: Tree
    family: RateFamily
    lam: float
    stop: StopRule
    seed: int = 0
    clock: str = NEXT_REACTION
    max_events: int = 10_000_000
    initial: tuple = ()
    max_entries: int | None = None     # reservoir closes after this many entries
    exit_depth: int | None = None      # particles leave from this generation at rate r_x
    root_streams: tuple | None = None  # shared_stream: ((name, rate), ...); default (("A", lam),)

    def __post_init__(self):
        if not self.lam > 0:
            raise EngineError("lambda must be positive")
        if self.clock not in (NEXT_REACTION, SHARED_STREAM):
            raise EngineError(f"unknown clock mode {self.clock!r}")
        if self.stop.kind not in ("horizon", "entries", "crossings"):
            raise EngineError(f"unknown stop rule {self.stop.kind!r}")
        if len(set(self.initial)) != len(self.initial):
            raise EngineError("initial configuration places two particles on one vertex")


@dataclass
class SystemState:
    tree: Tree
    t: float
    occ: dict                 # vertex -> particle
    pos: list                 # particle -> vertex (-1 once exited)
    entry_time: list          # particle -> entry time (0.0 for seeded particles)
    paths: list               # particle -> visited vertices, first is the entry/seed vertex
    n_entered: int
    n_events: int
    truncated: bool = False

    def occupied(self, x: int) -> bool:
        return x in self.occ

    def z(self, i: int, m: int) -> int:
        """Vertex at generation m visited by particle i."""
        path = self.paths[i]
        g0 = self.tree.gen[path[0]]
        if not g0 <= m < g0 + len(path):
            raise NotReached(f"particle {i} has not visited generation {m}")
        return path[m - g0]


class EventLog:
    """Time-ordered entries, jumps and exits.

    Column arrays: ``t``, ``kind``, ``particle``, ``src`` and ``dst`` (-1
    where a side does not exist).  ``initial`` lists the seeded vertices.
    """

    def __init__(self, tree: Tree, t, kind, particle, src, dst, initial=(), horizon=None):
        self.tree = tree
        self.t = np.asarray(t, dtype=np.float64)
        self.kind = np.asarray(kind, dtype=np.int8)
        self.particle = np.asarray(particle, dtype=np.int64)
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.initial = tuple(initial)
        self.horizon = float(self.t[-1]) if horizon is None and len(self.t) else horizon
        gen = np.frombuffer(tree.gen, dtype=np.int64) if len(tree) else np.zeros(0, np.int64)
        self.dst_gen = np.where(self.dst >= 0, gen[np.maximum(self.dst, 0)], -1)
        self._by_gen = None

    def __len__(self):
        return len(self.t)

    def lines(self) -> list[str]:
        return [f"{t!r} {KIND_NAMES[int(k)]} {p} {s} {d}"
                for t, k, p, s, d in zip(self.t.tolist(), self.kind.tolist(),
                                         self.particle.tolist(), self.src.tolist(),
                                         self.dst.tolist())]

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + ("\n" if len(self) else ""))

    @classmethod
    def read(cls, path, tree: Tree, initial=()) -> "EventLog":
        cols = ([], [], [], [], [])
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            t, k, p, s, d = line.split()
            for c, v in zip(cols, (float(t), KIND_CODES[k], int(p), int(s), int(d))):
                c.append(v)
        return cls(tree, *cols, initial=initial)

    def crossing_times(self, m: int) -> np.ndarray:
        """Sorted times at which a particle arrived in generation m."""
        if self._by_gen is None:
            self._by_gen = {}
            arrive = self.kind != EXIT
            for g in np.unique(self.dst_gen[arrive]):
                self._by_gen[int(g)] = self.t[arrive & (self.dst_gen == g)]
        return self._by_gen.get(m, np.zeros(0))


# sum tree ----------------------------------------------------------------------

class _SumTree:
    __slots__ = ("cap", "tr")

    def __init__(self, cap: int = 64):
        self.cap = cap
        self.tr = [0.0] * (2 * cap)

    def grow(self):
        old = self.tr[self.cap:]
        self.cap *= 2
        self.tr = [0.0] * (2 * self.cap)
        self.tr[self.cap:self.cap + len(old)] = old
        tr = self.tr
        for k in range(self.cap - 1, 0, -1):
            tr[k] = tr[2 * k] + tr[2 * k + 1]

    def set(self, i: int, v: float):
        tr = self.tr
        k = i + self.cap
        tr[k] = v
        k >>= 1
        while k:
            tr[k] = tr[2 * k] + tr[2 * k + 1]
            k >>= 1

    def find(self, v: float) -> int:
        tr, k, cap = self.tr, 1, self.cap
        while k < cap:
            left = 2 * k
            if v < tr[left]:
                k = left
            else:
                v -= tr[left]
                k = left + 1
        return k - cap


# engine ---------------------------------------------------------------------------

class _Sim:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.tree = cfg.tree
        self.fam = cfg.family
        self.t = 0.0
        self.occ = {}
        self.pos = []
        self.entry_time = []
        self.paths = []
        self.n_entered = 0
        self.n_events = 0
        self.arrivals = {}          # generation -> number of arrivals
        self.log = (array("d"), array("b"), array("q"), array("q"), array("q"))
        self._rate_cache = {}
        for x in cfg.initial:
            i = len(self.pos)
            self.occ[x] = i
            self.pos.append(x)
            self.entry_time.append(0.0)
            self.paths.append([x])

    # helpers
    def child_info(self, x: int):
        """(children, rates) of x, materialising the children."""
        ch = self.tree.ensure_children(x)
        if self.fam.symbolic:
            g = self.tree.gen[x]
            r = self._rate_cache.get(g)
            if r is None:
                r = self._rate_cache[g] = self.fam.gen_rate(g)
            return ch, (r,) * len(ch)
        return ch, self.fam.child_rates(self.tree, x)

    def exits_at(self, x: int) -> bool:
        d = self.cfg.exit_depth
        return d is not None and self.tree.gen[x] >= d

    def reservoir_open(self) -> bool:
        me = self.cfg.max_entries
        return (Tree.ROOT not in self.occ) and (me is None or self.n_entered < me)

    def record(self, kind, i, src, dst):
        lt, lk, lp, ls, ld = self.log
        lt.append(self.t)
        lk.append(kind)
        lp.append(i)
        ls.append(src)
        ld.append(dst)
        self.n_events += 1
        if kind != EXIT:
            g = self.tree.gen[dst]
            self.arrivals[g] = self.arrivals.get(g, 0) + 1

    def stop_now(self) -> bool:
        s = self.cfg.stop
        if s.kind == "entries":
            return self.n_entered >= s.n
        if s.kind == "crossings":
            return self.arrivals.get(s.m, 0) >= s.n
        return False

    def state(self, truncated: bool) -> SystemState:
        return SystemState(self.tree, self.t, self.occ, self.pos, self.entry_time, self.paths,
                           self.n_entered, self.n_events, truncated)

    def event_log(self) -> EventLog:
        horizon = self.cfg.stop.T if self.cfg.stop.kind == "horizon" else self.t
        return EventLog(self.tree, *self.log, initial=self.cfg.initial, horizon=horizon)

    # transitions
    def do_entry(self) -> int:
        i = len(self.pos)
        self.occ[Tree.ROOT] = i
        self.pos.append(Tree.ROOT)
        self.entry_time.append(self.t)
        self.paths.append([Tree.ROOT])
        self.n_entered += 1
        self.record(ENTRY, i, -1, Tree.ROOT)
        return i

    def do_jump(self, i: int, x: int, y: int):
        del self.occ[x]
        self.occ[y] = i
        self.pos[i] = y
        self.paths[i].append(y)
        self.record(JUMP, i, x, y)

    def do_exit(self, i: int, x: int):
        del self.occ[x]
        self.pos[i] = -1
        self.record(EXIT, i, x, -1)


class _NextReaction(_Sim):
    def __init__(self, cfg: SimConfig):
        super().__init__(cfg)
        self.rng = np.random.Generator(np.random.PCG64(cfg.seed))
        self._buf = []
        self.st = _SumTree()
        for i, x in enumerate(self.pos):
            self.refresh(i)

    def uniform(self) -> float:
        if not self._buf:
            self._buf = self.rng.random(4096).tolist()
            self._buf.reverse()
        return self._buf.pop()

    def particle_rate(self, x: int) -> float:
        if self.exits_at(x):
            return self.fam.out_rate(self.tree, x)
        ch, rs = self.child_info(x)
        occ = self.occ
        return math.fsum(r for c, r in zip(ch, rs) if c not in occ)

    def refresh(self, i: int):
        while i >= self.st.cap:
            self.st.grow()
        x = self.pos[i]
        self.st.set(i, 0.0 if x < 0 else self.particle_rate(x))

    def run(self) -> SystemState:
        cfg, lam = self.cfg, self.cfg.lam
        T = cfg.stop.T if cfg.stop.kind == "horizon" else math.inf
        occ, tree = self.occ, self.tree
        while True:
            if self.stop_now():
                return self.state(False)
            if self.n_events >= cfg.max_events:
                return self.state(True)
            res = lam if self.reservoir_open() else 0.0
            total = self.st.tr[1] + res
            if total <= 0.0:
                self.t = T if math.isfinite(T) else self.t
                return self.state(False)
            dt = -math.log(self.uniform()) / total
            if self.t + dt > T:
                self.t = T
                return self.state(False)
            self.t += dt
            v = self.uniform() * total
            if v < res:
                i = self.do_entry()
                self.refresh(i)
                continue
            i = self.st.find(v - res)
            if self.st.tr[i + self.st.cap] <= 0.0:   # rounding at a boundary: redraw
                self.t -= dt
                continue
            x = self.pos[i]
            if self.exits_at(x):
                self.do_exit(i, x)
                self.refresh(i)
            else:
                ch, rs = self.child_info(x)
                w = self.uniform() * self.st.tr[i + self.st.cap]
                y = -1
                for c, r in zip(ch, rs):
                    if c in occ:
                        continue
                    y = c
                    if w < r:
                        break
                    w -= r
                self.do_jump(i, x, y)
                self.refresh(i)
            if x != Tree.ROOT:
                j = occ.get(tree.parent[x])
                if j is not None:
                    self.refresh(j)


class _SharedStream(_Sim):
    def __init__(self, cfg: SimConfig):
        super().__init__(cfg)
        self.base = hs.derive("streams", cfg.seed)
        roots = cfg.root_streams if cfg.root_streams is not None else (("A", cfg.lam),)
        self.root_streams = [Stream(hs.derive(self.base, "root", name), rate)
                             for name, rate in roots if rate > 0]
        self.heap = []
        self.seq = 0
        self.version = {}     # transition id -> version; transition id: child vertex, ("x", v) or ("r", k)
        self.streams = {}
        for x in list(self.occ):
            self.enable_out(x)
        if self.reservoir_open():
            self.enable_root()

    def stream(self, tid, rate_fn):
        s = self.streams.get(tid)
        if s is None:
            s = self.streams[tid] = Stream(self._key(tid), rate_fn())
        return s

    def _key(self, tid):
        if isinstance(tid, tuple):
            return hs.derive(self.base, "exit", self.tree.key[tid[1]])
        return hs.combine(self.base, self.tree.key[tid])

    def push(self, tid, s: Stream):
        ver = self.version.get(tid, 0) + 1
        self.version[tid] = ver
        tt, _, _ = s.first_after(self.t)
        self.seq += 1
        heapq.heappush(self.heap, (tt, self.seq, tid, ver))

    def disable(self, tid):
        self.version[tid] = self.version.get(tid, 0) + 1

    def enable_root(self):
        for k, s in enumerate(self.root_streams):
            self.push(("r", k), s)

    def enable_edge(self, x: int, y: int, r: float):
        self.push(y, self.stream(y, lambda: r))

    def enable_out(self, x: int):
        if self.exits_at(x):
            tid = ("x", x)
            self.push(tid, self.stream(tid, lambda: self.fam.out_rate(self.tree, x)))
            return
        ch, rs = self.child_info(x)
        for c, r in zip(ch, rs):
            if c not in self.occ:
                self.enable_edge(x, c, r)

    def disable_out(self, x: int):
        if self.exits_at(x):
            self.disable(("x", x))
            return
        for c in self.tree.ensure_children(x):
            self.disable(c)

    def vacated(self, x: int):
        """x just became empty."""
        if x == Tree.ROOT:
            if self.reservoir_open():
                self.enable_root()
        else:
            p = self.tree.parent[x]
            if p in self.occ:
                ch, rs = self.child_info(p)
                self.enable_edge(p, x, rs[x - ch.start])

    def run(self) -> SystemState:
        cfg = self.cfg
        T = cfg.stop.T if cfg.stop.kind == "horizon" else math.inf
        occ, tree, heap = self.occ, self.tree, self.heap
        while True:
            if self.stop_now():
                return self.state(False)
            if self.n_events >= cfg.max_events:
                return self.state(True)
            while heap and heap[0][3] != self.version.get(heap[0][2]):
                heapq.heappop(heap)
            if not heap:
                self.t = T if math.isfinite(T) else self.t
                return self.state(False)
            tt, _, tid, _ = heap[0]
            if tt > T:
                self.t = T
                return self.state(False)
            heapq.heappop(heap)
            self.t = tt
            if isinstance(tid, tuple) and tid[0] == "r":
                for k in range(len(self.root_streams)):
                    self.disable(("r", k))
                i = self.do_entry()
                self.enable_out(Tree.ROOT)
            elif isinstance(tid, tuple):
                x = tid[1]
                self.disable(tid)
                self.do_exit(occ[x], x)
                self.vacated(x)
            else:
                y = tid
                x = tree.parent[y]
                i = occ[x]
                self.disable_out(x)
                self.do_jump(i, x, y)
                self.vacated(x)
                if y != Tree.ROOT:
                    # y is now occupied: nobody may jump into it
                    self.disable(y)
                self.enable_out(y)


def run(cfg: SimConfig) -> tuple[SystemState, EventLog]:
    sim = (_NextReaction if cfg.clock == NEXT_REACTION else _SharedStream)(cfg)
    state = sim.run()
    return state, sim.event_log()


# measurements -------------------------------------------------------------------

def current(log: EventLog, t: float, vertex: int | None = None, generation: int | None = None) -> int:
    """J_x(t) (with ``vertex``) or J_l(t) (with ``generation``)."""
    if (vertex is None) == (generation is None):
        raise EngineError("give exactly one of vertex or generation")
    if vertex is not None:
        mask = (log.dst == vertex) & (log.kind != EXIT)
        return int(np.count_nonzero(log.t[mask] <= t))
    return int(np.searchsorted(log.crossing_times(generation), t, side="right"))


def tau(log: EventLog, m: int, n: int) -> float:
    """First time J_m reaches n."""
    if n <= 0:
        return 0.0
    ct = log.crossing_times(m)
    if len(ct) < n:
        raise NotReached(f"only {len(ct)} particles reached generation {m}")
    return float(ct[n - 1])


def max_generation(log: EventLog, t: float) -> tuple[int, bool]:
    """(S(t), no_particles_flag)."""
    mask = (log.t <= t) & (log.kind != EXIT)
    if not mask.any():
        return 0, True
    return int(log.dst_gen[mask].max()), False


def particle_paths(log: EventLog) -> dict:
    paths = {i: [x] for i, x in enumerate(log.initial)}
    for k, p, d in zip(log.kind.tolist(), log.particle.tolist(), log.dst.tolist()):
        if k == ENTRY:
            paths[p] = [d]
        elif k == JUMP:
            paths[p].append(d)
    return paths


def disentanglement_generation(log: EventLog, n: int) -> int:
    """Smallest m with z_1^m, ..., z_n^m pairwise distinct and every particle past m."""
    if log.initial:
        raise EngineError("disentanglement is defined for runs from the empty configuration")
    paths = particle_paths(log)
    if any(i not in paths for i in range(n)):
        raise NotYet("not all of the first n particles have entered")
    if n <= 1:
        return 0
    ps = [paths[i] for i in range(n)]
    m = 0
    for a in range(n):
        for b in range(a + 1, n):
            pa, pb = ps[a], ps[b]
            k = 0
            L = min(len(pa), len(pb))
            while k < L and pa[k] == pb[k]:
                k += 1
            if k == L:
                raise NotYet(f"particles {a} and {b} have not separated yet")
            # runtime check: separated paths stay apart
            for g in range(k, L):
                if pa[g] == pb[g]:
                    raise AssertionError("paths re-merged after separating")
            m = max(m, k)
    short = min(len(p) for p in ps)
    if short <= m:
        raise NotYet(f"some particle has not reached generation {m}")
    return m


def occupancy_at(log: EventLog, t: float) -> dict:
    """Replay the log up to time t: vertex -> particle."""
    occ = {x: i for i, x in enumerate(log.initial)}
    n = int(np.searchsorted(log.t, t, side="right"))
    for k, p, s, d in zip(log.kind[:n].tolist(), log.particle[:n].tolist(),
                          log.src[:n].tolist(), log.dst[:n].tolist()):
        if s >= 0:
            del occ[s]
        if d >= 0:
            occ[d] = p
    return occ


def depth_of_traffic(state, x: int) -> int:
    """Distance from x to the nearest empty vertex of its subtree (0 iff x is empty)."""
    occ = state.occ if isinstance(state, SystemState) else state
    tree = state.tree if isinstance(state, SystemState) else None
    level, m = [x], 0
    while True:
        if any(v not in occ for v in level):
            return m
        nxt = []
        for v in level:
            if tree is not None and not tree.is_materialised(v):
                return m + 1       # unvisited children are empty
            if tree is None:
                raise EngineError("need a SystemState to walk the tree")
            nxt.extend(tree.ensure_children(v))
        level, m = nxt, m + 1


def availability(log: EventLog, x: int, t: float) -> float:
    """psi_x(t): time after t until x is next empty."""
    touch = np.flatnonzero((log.src == x) | (log.dst == x))
    ts = log.t[touch]
    before = touch[ts <= t]
    occupied = x in log.initial
    if len(before):
        occupied = log.dst[before[-1]] == x
    if not occupied:
        return 0.0
    leave = touch[(ts > t) & (log.src[touch] == x)]
    if not len(leave):
        raise NotObserved(f"vertex {x} is still occupied when the log ends")
    return float(log.t[leave[0]] - t)


def generation_occupation(log: EventLog, t0: float, t1: float, depth: int) -> np.ndarray:
    """Time-integrated number of particles per generation 0..depth over [t0, t1]."""
    out = np.zeros(depth + 1)
    here = {}
    for i, x in enumerate(log.initial):
        here[i] = (log.tree.gen[x], 0.0)
    for tt, k, p, d in zip(log.t.tolist(), log.kind.tolist(), log.particle.tolist(),
                           log.dst.tolist()):
        if tt > t1:
            break
        if p in here:
            g, since = here.pop(p)
            a, b = max(since, t0), min(tt, t1)
            if b > a and g <= depth:
                out[g] += b - a
        if k != EXIT:
            here[p] = (log.tree.gen[d], tt)
    for g, since in here.values():
        a = max(since, t0)
        if t1 > a and g <= depth:
            out[g] += t1 - a
    return out


def time_series(log: EventLog, times, fn) -> list[tuple[float, float]]:
    return [(float(t), fn(log, float(t))) for t in times]


def write_series(rows, path, header: str = "t,value", comments=()) -> None:
    lines = [f"# {c}" for c in comments] + [header]
    lines += [",".join(repr(v) if isinstance(v, float) else str(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")
