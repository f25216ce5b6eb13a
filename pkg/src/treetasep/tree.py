"""Lazily grown rooted Galton-Watson trees.

A vertex's child count is a pure function of (seed, path from the root), so
the shape of the tree does not depend on the order in which parts of it are
explored.  Vertex ids are dense integers handed out in creation order and the
children of a vertex are always created together, left to right, which makes
them a contiguous id range.
"""
from __future__ import annotations

import json
import math
import threading
from array import array
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _hashing as hs


class TreeError(ValueError):
    pass


class OffspringLaw:
    """Finite-support offspring distribution with p_0 = 0."""

    def __init__(self, probs: dict[int, float], atol: float = 1e-12, allow_critical: bool = False):
        items = sorted((int(k), float(p)) for k, p in probs.items() if float(p) != 0.0)
        if not items:
            raise TreeError("empty offspring law")
        for k, p in items:
            if p < 0 or not math.isfinite(p):
                raise TreeError(f"invalid probability p_{k}={p}")
            if k < 0:
                raise TreeError(f"negative offspring count {k}")
            if k == 0:
                raise TreeError("p_0 must be 0: the tree has no leaves")
        total = sum(p for _, p in items)
        if abs(total - 1.0) > atol:
            raise TreeError(f"probabilities sum to {total!r}, not 1")
        mean = sum(k * p for k, p in items)
        if mean <= 1.0 and not allow_critical:
            raise TreeError(f"mean offspring {mean!r} <= 1: the law must be supercritical")
        self.support = tuple(k for k, _ in items)
        self.probs = tuple(p for _, p in items)
        self._cdf = tuple(np.cumsum(self.probs).tolist())

    @classmethod
    def dirac(cls, k: int, allow_critical: bool = False) -> "OffspringLaw":
        return cls({k: 1.0}, allow_critical=allow_critical)

    @classmethod
    def regular(cls, d: int) -> "OffspringLaw":
        """Offspring law of the d-regular tree rooted at a vertex with d-1 children."""
        if d < 2:
            raise TreeError("d-regular trees need d >= 2")
        return cls.dirac(d - 1, allow_critical=(d == 2))

    @property
    def is_dirac(self) -> bool:
        return len(self.support) == 1

    def p(self, k: int) -> float:
        try:
            return self.probs[self.support.index(k)]
        except ValueError:
            return 0.0

    def sample(self, u: float) -> int:
        for k, c in zip(self.support, self._cdf):
            if u <= c:
                return k
        return self.support[-1]

    def to_dict(self) -> dict[str, float]:
        return {str(k): p for k, p in zip(self.support, self.probs)}

    def __eq__(self, other):
        return isinstance(other, OffspringLaw) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"OffspringLaw({dict(zip(self.support, self.probs))})"


@dataclass(frozen=True)
class TreeStats:
    d_min: int
    m: float
    m_tilde: float | None  # None when p_k = 0 for all k >= 2
    p1: float


def tree_stats(law: OffspringLaw) -> TreeStats:
    pairs = list(zip(law.support, law.probs))
    m = sum(k * p for k, p in pairs)
    heavy = sum(p for k, p in pairs if k >= 2)
    m_tilde = sum(k * p for k, p in pairs if k >= 2) / heavy if heavy > 0 else None
    return TreeStats(d_min=law.support[0], m=m, m_tilde=m_tilde, p1=law.p(1))


class Tree:
    """Lazily materialised rooted tree.

    Arrays are indexed by vertex id: ``parent``, ``gen``, ``first_child``
    (-1 while the children are not materialised) and ``nchild`` (-1 until the
    child count has been drawn).
    """

    ROOT = 0

    def __init__(self, law: OffspringLaw, seed: int = 0,
                 overrides: dict[tuple[int, ...], int] | None = None):
        self.law = law
        self.seed = int(seed)
        self.overrides = dict(overrides or {})
        self._lock = threading.RLock()
        self.parent = array("q", [-1])
        self.gen = array("q", [0])
        self.first_child = array("q", [-1])
        self.nchild = array("q", [-1])
        self.key = array("Q", [hs.derive("tree", self.seed)])
        self._dirac = law.support[0] if law.is_dirac and not self.overrides else None

    def __len__(self) -> int:
        return len(self.parent)

    # growth -----------------------------------------------------------
    def child_count(self, v: int) -> int:
        n = self.nchild[v]
        if n >= 0:
            return n
        if self._dirac is not None:
            n = self._dirac
        else:
            n = None
            if self.overrides:
                n = self.overrides.get(self.path(v))
            if n is None:
                n = self.law.sample(hs.uniform(self.key[v]))
        self.nchild[v] = n
        return n

    def ensure_children(self, v: int) -> range:
        """Materialise the children of ``v`` (idempotent) and return their ids."""
        fc = self.first_child[v]
        if fc >= 0:
            return range(fc, fc + self.nchild[v])
        with self._lock:
            fc = self.first_child[v]
            if fc >= 0:
                return range(fc, fc + self.nchild[v])
            n = self.child_count(v)
            fc = len(self.parent)
            g = self.gen[v] + 1
            k = self.key[v]
            for j in range(n):
                self.parent.append(v)
                self.gen.append(g)
                self.first_child.append(-1)
                self.nchild.append(-1)
                self.key.append(hs.combine(k, j + 1))
            self.first_child[v] = fc
            return range(fc, fc + n)

    children = ensure_children

    def is_materialised(self, v: int) -> bool:
        return self.first_child[v] >= 0

    def materialise(self, depth: int) -> None:
        """Materialise every vertex of generation <= depth."""
        level = [self.ROOT]
        for _ in range(depth):
            nxt = []
            for v in level:
                nxt.extend(self.ensure_children(v))
            level = nxt

    def generation(self, ell: int) -> list[int]:
        """All vertices of generation ``ell`` in left-to-right order (materialises)."""
        level = [self.ROOT]
        for _ in range(ell):
            nxt = []
            for v in level:
                nxt.extend(self.ensure_children(v))
            level = nxt
        return level

    def subtree_level(self, x: int, k: int) -> list[int]:
        level = [x]
        for _ in range(k):
            nxt = []
            for v in level:
                nxt.extend(self.ensure_children(v))
            level = nxt
        return level

    # navigation -------------------------------------------------------
    def path(self, v: int) -> tuple[int, ...]:
        """Child indices from the root down to ``v``."""
        out = []
        while v != self.ROOT:
            p = self.parent[v]
            out.append(v - self.first_child[p])
            v = p
        return tuple(reversed(out))

    def vertex_at(self, path) -> int:
        v = self.ROOT
        for j in path:
            ch = self.ensure_children(v)
            if not 0 <= j < len(ch):
                raise TreeError(f"path {tuple(path)} leaves the tree")
            v = ch[j]
        return v

    def ancestor_at(self, v: int, g: int) -> int:
        while self.gen[v] > g:
            v = self.parent[v]
        return v

    def ancestors(self, v: int) -> list[int]:
        """Vertices of [o, v), root first."""
        out = []
        while v != self.ROOT:
            v = self.parent[v]
            out.append(v)
        return out[::-1]

    def is_ancestor(self, x: int, y: int) -> bool:
        """True when x lies on the path [o, y] (x = y included)."""
        if self.gen[y] < self.gen[x]:
            return False
        return self.ancestor_at(y, self.gen[x]) == x

    def degree(self, v: int) -> int:
        return self.child_count(v) + (0 if v == self.ROOT else 1)

    # serialisation -----------------------------------------------------
    def snapshot_lines(self, depth: int | None = None) -> list[str]:
        lines = []
        for v in range(len(self)):
            if depth is not None and self.gen[v] > depth:
                continue
            lines.append(f"{v} {self.parent[v]} {self.gen[v]} {self.child_count(v)}")
        return lines

    def write_snapshot(self, path, depth: int | None = None) -> None:
        header = json.dumps({"seed": self.seed, "law": self.law.to_dict()}, sort_keys=True)
        body = "\n".join(self.snapshot_lines(depth))
        Path(path).write_text(f"# {header}\n{body}\n")

    @classmethod
    def read_snapshot(cls, path) -> "Tree":
        """Rebuild a tree from a snapshot; ids and child counts are restored exactly."""
        text = Path(path).read_text().splitlines()
        if not text or not text[0].startswith("# "):
            raise TreeError("snapshot is missing its header line")
        meta = json.loads(text[0][2:])
        law = OffspringLaw({int(k): p for k, p in meta["law"].items()}, allow_critical=True)
        rows = [tuple(int(x) for x in ln.split()) for ln in text[1:] if ln.strip()]
        tree = cls(law, meta["seed"])
        counts = {}
        for vid, par, g, n in rows:
            if vid != len(counts):
                raise TreeError(f"snapshot ids are not dense at {vid}")
            counts[vid] = (par, g, n)
        # replay the materialisation order implied by the ids
        for vid in range(1, len(counts)):
            par = counts[vid][0]
            if not tree.is_materialised(par):
                if tree.first_child[par] < 0 and len(tree) != vid:
                    raise TreeError(f"vertex {vid} is not in creation order")
                tree.nchild[par] = counts[par][2]
                tree.ensure_children(par)
        for vid, (par, g, n) in counts.items():
            if tree.parent[vid] != par or tree.gen[vid] != g:
                raise TreeError(f"snapshot row for vertex {vid} is inconsistent")
            if tree.nchild[vid] >= 0 and tree.nchild[vid] != n:
                raise TreeError(f"child count mismatch at vertex {vid}")
            tree.nchild[vid] = n
        return tree


def sample_tree(law: OffspringLaw, seed: int) -> Tree:
    return Tree(law, seed)


def branching_count(tree: Tree, x: int) -> int:
    """Number of vertices z in [o, x) with degree at least 3."""
    return sum(1 for z in tree.ancestors(x) if tree.degree(z) >= 3)


@dataclass
class CoreTree:
    """Tree with single-child chains collapsed.

    ``parent`` maps each non-root core vertex to its core parent and
    ``length`` to the number of original edges between them.  ``censored``
    marks edges that were cut by the depth limit rather than ending at a
    branching vertex.
    """
    root: int
    parent: dict[int, int]
    length: dict[int, int]
    censored: set[int]

    def edge_lengths(self, include_censored: bool = False) -> np.ndarray:
        return np.array([L for v, L in self.length.items()
                         if include_censored or v not in self.censored], dtype=np.int64)


def core(tree: Tree, depth: int) -> CoreTree:
    parent, length, censored = {}, {}, set()
    stack = [(Tree.ROOT, Tree.ROOT)]
    while stack:
        anchor, v = stack.pop()
        if tree.gen[v] >= depth:
            continue
        for c in tree.ensure_children(v):
            w = c
            while tree.gen[w] < depth and tree.child_count(w) == 1:
                w = tree.ensure_children(w)[0]
            parent[w] = anchor
            length[w] = tree.gen[w] - tree.gen[anchor]
            if tree.gen[w] >= depth:
                censored.add(w)
            else:
                stack.append((w, w))
    return CoreTree(Tree.ROOT, parent, length, censored)


def bfs_order(tree: Tree, depth: int) -> list[int]:
    """Vertices of generation <= depth sorted by (generation, id)."""
    out = []
    level = [Tree.ROOT]
    for g in range(depth + 1):
        out.extend(sorted(level))
        if g < depth:
            level = [c for v in level for c in tree.ensure_children(v)]
    return out


def iter_bfs(tree: Tree, depth: int):
    q = deque([Tree.ROOT])
    while q:
        v = q.popleft()
        yield v
        if tree.gen[v] < depth:
            q.extend(tree.ensure_children(v))
