"""Directed pair set over training covariates: a Euclidean minimum spanning
tree rooted at one node, with every edge pointing child -> parent."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

EXACT_LIMIT = 5000
KNN_K = 16


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


@dataclass
class SpanningTree:
    n: int
    edges: list[tuple[int, int]]  # (min index, max index)
    weight: float
    approximate: bool = False


@dataclass
class DirectedPairSet:
    n: int
    edges: list[tuple[int, int]]  # (tail, head), sorted by tail
    root: int
    approximate: bool = False
    _head: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.edges = sorted((int(t), int(h)) for t, h in self.edges)
        head = np.full(self.n, -1, dtype=np.int64)
        for t, h in self.edges:
            if 0 <= t < self.n:
                head[t] = h
        self._head = head

    @property
    def heads(self) -> np.ndarray:
        """``heads[i]`` is the head of the edge with tail ``i``, or -1."""
        return self._head

    def __contains__(self, pair) -> bool:
        t, h = int(pair[0]), int(pair[1])
        return 0 <= t < self.n and self._head[t] == h

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "root": self.root,
            "approximate": self.approximate,
            "edges": [[t, h] for t, h in self.edges],
        }

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")


def _candidate_edges(P: np.ndarray, exact_limit: int):
    n = P.shape[0]
    if n <= exact_limit:
        i, j = np.triu_indices(n, k=1)
        w = np.sqrt(((P[i] - P[j]) ** 2).sum(axis=1))
        return i, j, w, False
    tree = cKDTree(P)
    k = min(KNN_K + 1, n)
    _, nbr = tree.query(P, k=k)
    i = np.repeat(np.arange(n), k - 1)
    j = nbr[:, 1:].ravel()
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    pairs = np.unique(np.stack([lo, hi], axis=1), axis=0)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    i, j = pairs[:, 0], pairs[:, 1]
    w = np.sqrt(((P[i] - P[j]) ** 2).sum(axis=1))
    return i, j, w, True


def _kruskal(n, i, j, w, uf=None):
    order = np.lexsort((j, i, w))  # by weight, then min index, then max index
    uf = uf or UnionFind(n)
    edges, total = [], 0.0
    for k in order:
        a, b = int(i[k]), int(j[k])
        if uf.union(a, b):
            edges.append((a, b))
            total += float(w[k])
            if len(edges) == n - 1:
                break
    return edges, total, uf


def build_mst(points, exact_limit: int = EXACT_LIMIT) -> SpanningTree:
    """Kruskal over Euclidean distances; ties broken by (weight, min index,
    max index). Above ``exact_limit`` points a k-nearest-neighbour candidate
    graph is used and the result is flagged approximate."""
    P = np.asarray(points, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    n = P.shape[0]
    if n == 0:
        raise ValueError("cannot build a spanning tree over zero points")
    if n == 1:
        return SpanningTree(1, [], 0.0)
    i, j, w, approx = _candidate_edges(P, exact_limit)
    edges, total, uf = _kruskal(n, i, j, w)
    if len(edges) < n - 1:
        # kNN graph left several components: join them with exact
        # nearest pairs between component representatives' members.
        while len(edges) < n - 1:
            roots = np.array([uf.find(a) for a in range(n)])
            comps = np.unique(roots)
            first = comps[0]
            inside = np.flatnonzero(roots == first)
            outside = np.flatnonzero(roots != first)
            d, nn = cKDTree(P[outside]).query(P[inside], k=1)
            k = int(np.argmin(d))
            a, b = int(inside[k]), int(outside[nn[k]])
            uf.union(a, b)
            edges.append((min(a, b), max(a, b)))
            total += float(d[k])
    return SpanningTree(n, sorted(edges), total, approx)


def orient(tree: SpanningTree, root: int) -> DirectedPairSet:
    """Root the tree and point every edge from child (tail) to parent (head)."""
    n = tree.n
    if not 0 <= root < n:
        raise ValueError(f"root {root} out of range for {n} nodes")
    adj: list[list[int]] = [[] for _ in range(n)]
    for a, b in tree.edges:
        adj[a].append(b)
        adj[b].append(a)
    parent = [-2] * n
    parent[root] = -1
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in sorted(adj[u]):
            if parent[v] == -2:
                parent[v] = u
                queue.append(v)
    if any(p == -2 for p in parent) or len(tree.edges) != n - 1:
        raise ValueError("input is not a spanning tree (disconnected or wrong edge count)")
    edges = [(v, parent[v]) for v in range(n) if v != root]
    return DirectedPairSet(n, edges, root, tree.approximate)


def validate(pairset: DirectedPairSet) -> bool:
    n = pairset.n
    if len(pairset.edges) != n - 1:
        return False
    tails = [t for t, _ in pairset.edges]
    if len(set(tails)) != len(tails) or pairset.root in tails:
        return False
    uf = UnionFind(n)
    for t, h in pairset.edges:
        if not (0 <= t < n and 0 <= h < n) or t == h:
            return False
        if not uf.union(t, h):
            return False
    return True


def default_root(counts) -> int:
    """Group with the most responses; ties go to the lowest index."""
    return int(np.argmax(np.asarray(counts)))


def build_pairset(points, counts) -> DirectedPairSet:
    tree = build_mst(points)
    return orient(tree, default_root(counts))
