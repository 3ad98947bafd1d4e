"""Graphs, parameter containers and group norms for the pairwise
exponential-series family.

Nodes are 0-based. Edges are stored as sorted ``(i, j)`` tuples with
``i < j`` in lexicographic order; this order fixes the parameter layout.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec, stat_matrix


@dataclass(frozen=True)
class Graph:
    d: int
    edges: tuple = ()

    def __post_init__(self):
        if int(self.d) < 1:
            raise ValueError("graph needs at least one node")
        canon = set()
        for e in self.edges:
            i, j = int(e[0]), int(e[1])
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.d and 0 <= j < self.d):
                raise ValueError(f"edge {e} out of range for d={self.d}")
            canon.add((min(i, j), max(i, j)))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "edges", tuple(sorted(canon)))

    @classmethod
    def complete(cls, d):
        return cls(d, tuple(itertools.combinations(range(d), 2)))

    @classmethod
    def empty(cls, d):
        return cls(d, ())

    @property
    def n_edges(self):
        return len(self.edges)

    def edge_index(self):
        return {e: k for k, e in enumerate(self.edges)}

    def neighbors(self):
        nbrs = [[] for _ in range(self.d)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return [sorted(n) for n in nbrs]

    def n_components(self):
        parent = list(range(self.d))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, j in self.edges:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[ri] = rj
        return len({find(a) for a in range(self.d)})

    def is_forest(self):
        return self.n_edges == self.d - self.n_components()


def _edge_key(e):
    return f"{e[0]},{e[1]}"


@dataclass
class ParamVector:
    """Natural parameters: ``theta_v`` has shape ``(d, m1)``, ``theta_e``
    has shape ``(n_edges, m2, m2)`` in graph edge order."""

    spec: BasisSpec
    graph: Graph
    theta_v: np.ndarray = None
    theta_e: np.ndarray = None

    def __post_init__(self):
        d, E = self.graph.d, self.graph.n_edges
        m1, m2 = self.spec.m1, self.spec.m2
        if self.theta_v is None:
            self.theta_v = np.zeros((d, m1))
        if self.theta_e is None:
            self.theta_e = np.zeros((E, m2, m2))
        self.theta_v = np.asarray(self.theta_v, dtype=float).reshape(d, m1)
        self.theta_e = np.asarray(self.theta_e, dtype=float).reshape(E, m2, m2)

    @classmethod
    def zeros(cls, spec, graph):
        return cls(spec, graph)

    @classmethod
    def from_flat(cls, spec, graph, flat):
        flat = np.asarray(flat, dtype=float)
        nv = graph.d * spec.m1
        if flat.size != spec.n_stats(graph.d, graph.n_edges):
            raise ValueError("flat vector length does not match layout")
        return cls(spec, graph, flat[:nv].copy(), flat[nv:].copy())

    @property
    def flat(self):
        return np.concatenate([self.theta_v.ravel(), self.theta_e.ravel()])

    @property
    def n_free(self):
        """Length of the (unpenalized) vertex part of the flat layout."""
        return self.graph.d * self.spec.m1

    def copy(self):
        return ParamVector(self.spec, self.graph, self.theta_v.copy(), self.theta_e.copy())

    def edge_block(self, i, j):
        return self.theta_e[self.graph.edge_index()[(min(i, j), max(i, j))]]

    def edge_norms(self):
        if self.graph.n_edges == 0:
            return np.zeros(0)
        return np.sqrt((self.theta_e ** 2).sum(axis=(1, 2)))

    def to_dict(self):
        return {
            "d": self.graph.d,
            "m1": self.spec.m1,
            "m2": self.spec.m2,
            "edges": [list(e) for e in self.graph.edges],
            "theta_v": self.theta_v.tolist(),
            "theta_e": {_edge_key(e): self.theta_e[k].tolist()
                        for k, e in enumerate(self.graph.edges)},
        }

    @classmethod
    def from_dict(cls, doc):
        spec = BasisSpec(int(doc["m1"]), int(doc["m2"]))
        graph = Graph(int(doc["d"]), tuple(tuple(e) for e in doc["edges"]))
        theta_e = np.zeros((graph.n_edges, spec.m2, spec.m2))
        for k, e in enumerate(graph.edges):
            theta_e[k] = np.asarray(doc["theta_e"][_edge_key(e)], dtype=float)
        return cls(spec, graph, np.asarray(doc["theta_v"], dtype=float), theta_e)

    def dumps(self):
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


def group_norm(theta):
    """Sum of Euclidean norms of the edge blocks (vertex blocks excluded)."""
    return float(theta.edge_norms().sum())


def dual_group_norm(theta_e):
    """Largest Euclidean norm among edge blocks; accepts a ParamVector or an
    array whose leading axis indexes blocks."""
    if isinstance(theta_e, ParamVector):
        norms = theta_e.edge_norms()
    else:
        arr = np.asarray(theta_e, dtype=float)
        arr = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr[None, :]
        norms = np.sqrt((arr ** 2).sum(axis=1))
    return float(norms.max()) if norms.size else 0.0


def support(theta, tol=0.0):
    """Edges whose parameter block has norm strictly above ``tol``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    norms = theta.edge_norms()
    return frozenset(e for e, nrm in zip(theta.graph.edges, norms) if nrm > tol)


def log_density_unnorm(theta, x):
    """``<theta, phi(x)>`` for one point, or for each row of a 2-D array."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    S = stat_matrix(np.atleast_2d(x), theta.graph, theta.spec)
    out = S @ theta.flat
    return float(out[0]) if single else out


def embed_params(theta, spec_new, graph_new=None):
    """Zero-pad ``theta`` into a larger truncation (and optionally a graph
    containing its edges), keeping every existing coefficient in place."""
    graph_new = graph_new or theta.graph
    if spec_new.m1 < theta.spec.m1 or spec_new.m2 < theta.spec.m2:
        raise ValueError("embedding requires non-decreasing truncation")
    new = ParamVector.zeros(spec_new, graph_new)
    new.theta_v[:, :theta.spec.m1] = theta.theta_v
    idx = graph_new.edge_index()
    m2 = theta.spec.m2
    for k, e in enumerate(theta.graph.edges):
        if e not in idx:
            raise ValueError(f"edge {e} missing from target graph")
        new.theta_e[idx[e], :m2, :m2] = theta.theta_e[k]
    return new
