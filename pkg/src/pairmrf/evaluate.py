"""Held-out risk and edge-selection metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import trw
from .exceptions import EvaluationError, GraphStructureError
from .graphmodel import ParamVector, log_density_unnorm, support
from .gridfn import LOG_FLOOR


@dataclass
class RocPoint:
    lam: float
    tp_rate: float
    tn_rate: float
    n_edges_selected: int


def tree_logz(theta, tree, grid=trw.DEFAULT_GRID):
    """Grid log-partition of a tree-supported model by sum-product
    elimination from the leaves of each component."""
    if not tree.is_forest():
        raise GraphStructureError("tree_logz needs an acyclic graph")
    tree_edges = set(tree.edges)
    norms = theta.edge_norms()
    for e, nrm in zip(theta.graph.edges, norms):
        if nrm > 0 and e not in tree_edges:
            raise GraphStructureError(f"parameters on edge {e} outside the tree")
    g, G = trw._potentials(theta, grid)
    d = tree.d
    idx = theta.graph.edge_index()
    logw = np.log(grid.weight)

    def pair_potential(i, j):
        """Edge log-potential indexed [x_i, x_j]."""
        a, b = min(i, j), max(i, j)
        k = idx.get((a, b))
        if k is None:
            return np.zeros((grid.n_points, grid.n_points))
        return G[k] if i == a else G[k].T

    nbrs = tree.neighbors()
    seen = np.zeros(d, dtype=bool)
    total = 0.0
    for root in range(d):
        if seen[root]:
            continue
        # iterative DFS order, then eliminate in reverse
        order, parent = [], {root: None}
        stack = [root]
        seen[root] = True
        while stack:
            v = stack.pop()
            order.append(v)
            for u in nbrs[v]:
                if not seen[u]:
                    seen[u] = True
                    parent[u] = v
                    stack.append(u)
        incoming = {v: g[v].copy() for v in order}
        for v in reversed(order):
            p = parent[v]
            if p is None:
                continue
            # message to p: log int exp(g_v + children + psi(x_v, x_p)) dx_v
            msg = logsumexp(incoming[v][:, None] + pair_potential(v, p), axis=0) + logw
            incoming[p] += msg
        total += float(logsumexp(incoming[root]) + logw)
    return total


def tree_exact_nll(theta, tree, data, grid=trw.DEFAULT_GRID):
    """Average negative log-likelihood of a tree-supported model, with the
    normalizer computed exactly on the grid."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    logz = tree_logz(theta, tree, grid)
    return float(logz - np.mean(log_density_unnorm(theta, data)))


def trw_nll_upper(theta, alpha, data, grid=trw.DEFAULT_GRID, **bp_kwargs):
    """Upper bound on the average negative log-likelihood from the
    tree-reweighted bound on the log-partition."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    res = trw.bp_run(theta, alpha, grid=grid, **bp_kwargs)
    return float(res.q_value - np.mean(log_density_unnorm(theta, data)))


def gaussian_nll(omega, data, mean=None):
    """Average Gaussian negative log-likelihood under precision ``omega``."""
    omega = np.asarray(omega, dtype=float)
    X = np.atleast_2d(np.asarray(data, dtype=float))
    if mean is not None:
        X = X - np.asarray(mean, dtype=float)
    d = omega.shape[0]
    if not np.allclose(omega, omega.T, atol=1e-12, rtol=0):
        raise EvaluationError("precision matrix is not symmetric")
    try:
        L = np.linalg.cholesky(omega)
    except np.linalg.LinAlgError as exc:
        raise EvaluationError("precision matrix is not positive definite") from exc
    logdet = 2.0 * np.log(np.diag(L)).sum()
    quad = np.einsum("ni,ij,nj->n", X, omega, X).mean()
    return float(0.5 * d * np.log(2 * np.pi) - 0.5 * logdet + 0.5 * quad)


def kl_grid(p, q):
    """Riemann-sum ``int p log(p / q)`` for densities on a shared grid."""
    if p.grid != q.grid or p.values.shape != q.values.shape:
        raise ValueError("densities live on different grids")
    pv = p.values
    qv = np.maximum(q.values, LOG_FLOOR)
    terms = np.where(pv > 0, pv * (np.log(np.maximum(pv, LOG_FLOOR)) - np.log(qv)), 0.0)
    return float(terms.sum() * p.grid.weight ** pv.ndim)


def edge_rates(selected, truth):
    """True-positive and true-negative rates of an edge set."""
    d = truth.d
    true_e = set(truth.edges)
    sel = {(min(i, j), max(i, j)) for i, j in selected}
    n_pairs = d * (d - 1) // 2
    n_neg = n_pairs - len(true_e)
    tp = len(sel & true_e) / len(true_e) if true_e else 1.0
    tn = (n_neg - len(sel - true_e)) / n_neg if n_neg else 1.0
    return tp, tn


def roc_curve(path, truth):
    """One RocPoint per fit along a path.

    ``path`` is a PathResult or an iterable of ``(lam, model)`` pairs where
    the model is a ParamVector or a precision matrix.
    """
    pairs = zip(path.lambdas, path.thetas) if hasattr(path, "thetas") else path
    out = []
    for lam, model in pairs:
        if isinstance(model, ParamVector):
            sel = support(model, 0.0)
        else:
            om = np.asarray(model)
            sel = {(i, j) for i in range(om.shape[0]) for j in range(i + 1, om.shape[0])
                   if om[i, j] != 0}
        tp, tn = edge_rates(sel, truth)
        out.append(RocPoint(float(lam), tp, tn, len(sel)))
    return out


def best_tp_tn(points):
    """Largest ``tp_rate + tn_rate`` along a curve."""
    return max(p.tp_rate + p.tn_rate for p in points)


def write_metrics(path, rows, fields=("lam", "nll", "tp", "tn", "edges")):
    """Write metric dictionaries as CSV in a fixed column order; missing
    fields are left empty."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for row in rows:
            w.writerow(["" if row.get(f) is None else _fmt(row[f]) for f in fields])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17e}"
    return str(v)
