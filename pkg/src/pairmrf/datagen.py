"""Seeded synthetic data: sparse Gaussians, Gaussian copulas and mixtures
of tree-structured copulas."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .graphmodel import Graph
from .spantree import random_spanning_tree

MARGINAL_SD = 1.0 / 8.0
CLIP = 1e-9


@dataclass
class Dataset:
    values: np.ndarray
    meta: dict = field(default_factory=dict)
    graph: Graph = None
    omega: np.ndarray = None
    labels: np.ndarray = None
    components: list = None

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]


def gen_er_graph(d, p, rng):
    """Erdos-Renyi graph: each unordered pair independently with prob. ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("edge probability must lie in [0, 1]")
    iu, ju = np.triu_indices(d, k=1)
    keep = rng.uniform(size=iu.size) < p
    return Graph(d, tuple(zip(iu[keep].tolist(), ju[keep].tolist())))


def gen_tree_graph(d, rng):
    """Random spanning tree of the complete graph."""
    return random_spanning_tree(Graph.complete(d), rng)


def sparse_precision(graph, rng):
    """Diagonally dominant precision matrix supported on ``graph``: edge
    entries ``+-0.5 * U(0.5, 1)``, diagonal ``1 + sum |off-diagonal|``."""
    d = graph.d
    omega = np.zeros((d, d))
    for i, j in graph.edges:
        v = rng.choice([-1.0, 1.0]) * 0.5 * rng.uniform(0.5, 1.0)
        omega[i, j] = omega[j, i] = v
    omega[np.diag_indices(d)] = 1.0 + np.abs(omega).sum(axis=1)
    return omega


def gen_sparse_gaussian(graph, n, rng, mean=0.5, sd=MARGINAL_SD):
    """Gaussian with precision supported on ``graph``, covariance rescaled
    to marginal standard deviation ``sd`` and shifted to ``mean``. The
    returned ``omega`` is the precision of the generating distribution."""
    omega0 = sparse_precision(graph, rng)
    if np.linalg.eigvalsh(omega0).min() <= 0:
        raise RuntimeError("precision construction is not positive definite")
    sigma0 = np.linalg.inv(omega0)
    scale = sd / np.sqrt(np.diag(sigma0))
    sigma = sigma0 * np.outer(scale, scale)
    sigma = 0.5 * (sigma + sigma.T)
    omega = omega0 / np.outer(scale, scale)
    L = np.linalg.cholesky(sigma)
    X = mean + rng.standard_normal((n, graph.d)) @ L.T
    meta = {"generator": "gaussian", "n": n, "d": graph.d, "mean": mean, "sd": sd}
    return Dataset(X, meta, graph, omega)


def copula_transform(x):
    """``sign(x - 1/2) |x - 1/2|^0.6 / 5 + 1/2``, elementwise."""
    x = np.asarray(x, dtype=float)
    c = x - 0.5
    out = np.sign(c) * np.abs(c) ** 0.6 / 5.0 + 0.5
    return float(out) if out.ndim == 0 else out


def gen_copula(graph, n, rng):
    """Gaussian data pushed through :func:`copula_transform`, clipped to the
    open unit interval."""
    base = gen_sparse_gaussian(graph, n, rng)
    X = np.clip(copula_transform(base.values), CLIP, 1.0 - CLIP)
    meta = dict(base.meta, generator="copula")
    return Dataset(X, meta, graph, base.omega)


def gen_tree_mixture(d, n, rng, n_components=3):
    """Equal-weight mixture of copula distributions, each Markov to its own
    random spanning tree. ``graph`` holds the union of the trees."""
    trees = [gen_tree_graph(d, rng) for _ in range(n_components)]
    labels = rng.integers(n_components, size=n)
    X = np.empty((n, d))
    for c, tree in enumerate(trees):
        rows = np.flatnonzero(labels == c)
        comp = gen_copula(tree, max(rows.size, 1), rng)
        X[rows] = comp.values[:rows.size]
    union = Graph(d, tuple(sorted({e for t in trees for e in t.edges})))
    meta = {"generator": "tree_mixture", "n": n, "d": d, "n_components": n_components,
            "components": [[list(e) for e in t.edges] for t in trees]}
    return Dataset(X, meta, union, None, labels, trees)


def standardize(X):
    """Center each column and scale it to unit variance."""
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - mu) / sd, mu, sd


# ---------------------------------------------------------------------------
# file formats


def write_csv(path, X, header=False):
    X = np.atleast_2d(X)
    hdr = ",".join(f"x{k}" for k in range(X.shape[1])) if header else ""
    np.savetxt(path, X, delimiter=",", fmt="%.17e", header=hdr, comments="")


def read_csv(path):
    with open(path) as fh:
        first = fh.readline()
    skip = 1 if first and first.strip() and first.strip()[0].isalpha() else 0
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2))


def write_edges(path, graph):
    with open(path, "w") as fh:
        fh.write(f"# d={graph.d}\n")
        for i, j in graph.edges:
            fh.write(f"{i} {j}\n")


def read_edges(path, d=None):
    edges = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# d="):
                d = int(line[4:]) if d is None else d
                continue
            if not line or line.startswith("#"):
                continue
            i, j = line.split()[:2]
            edges.append((int(i), int(j)))
    if d is None:
        d = 1 + max((max(e) for e in edges), default=0)
    return Graph(d, tuple(edges))


def write_meta(path, meta):
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
