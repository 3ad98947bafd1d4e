"""Spanning trees, edge appearance weights and Frank-Wolfe updates of those
weights."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import BPNotConverged
from .graphmodel import Graph

log = logging.getLogger(__name__)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def kruskal_max(d, weights):
    """Maximum-weight spanning forest of the graph whose edges are the keys
    of ``weights``. Ties are broken by lexicographic edge order."""
    items = []
    for (i, j), w in weights.items():
        if not np.isfinite(w):
            raise ValueError(f"weight for edge {(i, j)} is not finite")
        items.append(((min(i, j), max(i, j)), float(w)))
    items.sort(key=lambda kv: (-kv[1], kv[0]))
    uf = _UnionFind(d)
    chosen = []
    for e, _ in items:
        if uf.union(*e):
            chosen.append(e)
            if len(chosen) == d - 1:
                break
    return Graph(d, tuple(chosen))


def random_spanning_tree(graph, rng):
    """Spanning forest from Kruskal on i.i.d. uniform edge weights. Not
    uniform over trees, but every spanning tree has positive probability."""
    w = rng.uniform(size=graph.n_edges)
    return kruskal_max(graph.d, dict(zip(graph.edges, w)))


@dataclass
class EdgeWeights:
    """Edge appearance probabilities aligned with ``graph.edges``."""

    graph: Graph
    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(self.graph.n_edges)

    @classmethod
    def ones(cls, graph):
        return cls(graph, np.ones(graph.n_edges))

    def as_dict(self):
        return dict(zip(self.graph.edges, self.alpha))

    def copy(self):
        return EdgeWeights(self.graph, self.alpha.copy())


def tree_indicator(graph, tree):
    tree_edges = set(tree.edges)
    return np.array([1.0 if e in tree_edges else 0.0 for e in graph.edges])


def edge_weights_init(graph, n_trees=100, rng=None):
    """Average edge indicator over random spanning trees.

    Edges missed by every sampled tree get one extra tree forced to contain
    them, so all weights are positive and the result stays a convex
    combination of spanning-tree indicators.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    rng = np.random.default_rng(rng)
    if graph.n_edges == 0:
        return EdgeWeights(graph, np.zeros(0))
    total = np.zeros(graph.n_edges)
    count = 0
    for _ in range(n_trees):
        total += tree_indicator(graph, random_spanning_tree(graph, rng))
        count += 1
    for k in np.flatnonzero(total == 0):
        w = rng.uniform(size=graph.n_edges)
        w[k] = w.max() + 1.0
        tree = kruskal_max(graph.d, dict(zip(graph.edges, w)))
        total += tree_indicator(graph, tree)
        count += 1
    return EdgeWeights(graph, total / count)


def frank_wolfe_alpha(theta, alpha0, steps, grid=None, line_search=True,
                      armijo=1e-4, max_halvings=20, bp_kwargs=None, callback=None):
    """Minimize the tree-reweighted bound over edge weights by Frank-Wolfe.

    Each step solves the linearized problem with a maximum-weight spanning
    tree on the current mutual informations and moves
    ``alpha <- c alpha + (1 - c) s``. With ``line_search`` the move ``1 - c``
    is backtracked from 1/2 until the Armijo condition holds (no move if
    none does); otherwise ``c = 2 / (2 + t)`` with ``t`` starting at 1.

    Returns ``(alpha, history)`` where history lists the bound per iterate.
    """
    from . import trw

    bp_kwargs = dict(bp_kwargs or {})
    if grid is not None:
        bp_kwargs["grid"] = grid
    graph = alpha0.graph
    alpha = alpha0.copy()
    if steps <= 0 or graph.n_edges == 0:
        return alpha, []

    res = trw.bp_run(theta, alpha, **bp_kwargs)
    q = trw.q_value(theta, alpha, res)
    history = [q]
    for t in range(1, steps + 1):
        mi = np.array([res.mutual_info[k] for k in range(graph.n_edges)])
        tree = kruskal_max(graph.d, dict(zip(graph.edges, mi)))
        s = tree_indicator(graph, tree)
        direction = s - alpha.alpha
        slope = -float(mi @ direction)
        if slope >= -1e-14:
            break
        if line_search:
            gamma, accepted = 0.5, None
            for _ in range(max_halvings):
                cand = EdgeWeights(graph, alpha.alpha + gamma * direction)
                try:
                    cres = trw.bp_run(theta, cand, messages=res.messages, **bp_kwargs)
                    cq = trw.q_value(theta, cand, cres)
                except BPNotConverged:
                    gamma *= 0.5
                    continue
                if cq <= q + armijo * gamma * slope:
                    accepted = (cand, cres, cq)
                    break
                gamma *= 0.5
            if accepted is None:
                log.debug("frank-wolfe line search found no descent at step %d", t)
                break
            alpha, res, q = accepted
        else:
            c = 2.0 / (2.0 + t)
            alpha = EdgeWeights(graph, c * alpha.alpha + (1.0 - c) * s)
            res = trw.bp_run(theta, alpha, messages=res.messages, **bp_kwargs)
            q = trw.q_value(theta, alpha, res)
        history.append(q)
        if callback is not None:
            callback(t, alpha, q)
    return alpha, history
