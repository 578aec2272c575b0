"""Graphs, capped hop distances and relative position coefficients."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import AsymmetricAdjacency, FeatureShapeMismatch, SelfLoop

UNREACHABLE = -1
DEFAULT_CEILING = 3


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph.

    Nodes are the indices ``0..n-1``; every node also serves as an anchor.
    ``adjacency`` is a symmetric 0/1 matrix with zero diagonal and
    ``features`` holds one row of attributes per node.
    """

    adjacency: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "adjacency", _frozen(np.asarray(self.adjacency, dtype=np.int8)))
        object.__setattr__(self, "features", _frozen(np.asarray(self.features, dtype=np.float64)))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def edges(self) -> list[tuple[int, int]]:
        """Edges listed once each as ``(i, j)`` with ``i < j``."""
        i, j = np.nonzero(np.triu(self.adjacency, k=1))
        return [(int(a), int(b)) for a, b in zip(i, j)]

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(int)

    def permuted(self, perm) -> Graph:
        """Relabel so that old node ``i`` becomes new node ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        return Graph(self.adjacency[np.ix_(inv, inv)], self.features[inv])

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.adjacency.shape == other.adjacency.shape
            and np.array_equal(self.adjacency, other.adjacency)
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )

    __hash__ = None


def from_edges(n: int, edges, features) -> Graph:
    adj = np.zeros((n, n), dtype=np.int8)
    for i, j in edges:
        adj[i, j] = adj[j, i] = 1
    return Graph(adj, features)


def validate_graph(g: Graph) -> Graph:
    """Return ``g`` unchanged, or raise naming the first offending index."""
    a = g.adjacency
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise AsymmetricAdjacency(f"adjacency must be square, got shape {a.shape}")
    bad = np.argwhere(a != a.T)
    if len(bad):
        i, j = bad[0]
        raise AsymmetricAdjacency(f"adjacency[{i}][{j}]={a[i, j]} but adjacency[{j}][{i}]={a[j, i]}")
    if not np.isin(a, (0, 1)).all():
        i, j = np.argwhere(~np.isin(a, (0, 1)))[0]
        raise AsymmetricAdjacency(f"adjacency[{i}][{j}]={a[i, j]} is not 0/1")
    loops = np.flatnonzero(np.diag(a))
    if len(loops):
        raise SelfLoop(f"self loop at node {loops[0]}")
    x = g.features
    if x.ndim != 2 or x.shape[0] != a.shape[0]:
        raise FeatureShapeMismatch(
            f"features have {x.shape[0] if x.ndim else 0} rows for {a.shape[0]} nodes"
            + (f"; first missing row is {x.shape[0]}" if x.ndim == 2 and x.shape[0] < a.shape[0] else "")
        )
    if x.shape[1] < 1:
        raise FeatureShapeMismatch("features need at least one column (row 0)")
    return g


def bfs_distances(g: Graph, r: int = DEFAULT_CEILING) -> np.ndarray:
    """Hop counts capped at ``r``; farther or disconnected pairs get ``UNREACHABLE``."""
    if r < 1:
        raise ValueError(f"ceiling r must be >= 1, got {r}")
    validate_graph(g)
    n = g.n
    neighbours = [np.flatnonzero(row) for row in g.adjacency]
    d = np.full((n, n), UNREACHABLE, dtype=np.int64)
    for src in range(n):
        d[src, src] = 0
        frontier = deque([src])
        while frontier:
            v = frontier.popleft()
            dv = d[src, v]
            if dv == r:
                continue
            for u in neighbours[v]:
                if d[src, u] == UNREACHABLE:
                    d[src, u] = dv + 1
                    frontier.append(u)
    d.setflags(write=False)
    return d


def position_coefficients(d: np.ndarray) -> np.ndarray:
    """Row-wise softmax of negative hop distance over all anchors.

    Unreachable anchors get weight zero. The self term ``exp(0) = 1`` keeps
    every denominator positive.
    """
    d = np.asarray(d)
    reach = d != UNREACHABLE
    w = np.where(reach, np.exp(-np.where(reach, d, 0).astype(np.float64)), 0.0)
    q = w / w.sum(axis=1, keepdims=True)
    q.setflags(write=False)
    return q


def uniform_coefficients(n: int) -> np.ndarray:
    """Position-blind ablation: every anchor weighted ``1/n``."""
    q = np.full((n, n), 1.0 / n)
    q.setflags(write=False)
    return q
