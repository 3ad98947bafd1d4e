"""Tree-reweighted functional message passing on a uniform grid.

Messages, beliefs and pseudodensities are kept in the log domain; integrals
are midpoint Riemann sums. Edges whose parameter block is exactly zero are
skipped: at the fixed point their messages are constant and their
pseudodensity factorizes, so they do not change beliefs or the bound.
"""

from __future__ import annotations

import logging
import string
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .basis import legendre_table
from .exceptions import BPNotConverged, InvalidWeightsError
from .gridfn import GriddedFn1D, GriddedFn2D, Grid1D, LOG_FLOOR

log = logging.getLogger(__name__)

DEFAULT_GRID = Grid1D(128)


@dataclass
class PseudoMarginals:
    q_i: list
    q_ij: dict  # edge -> GriddedFn2D, indexed [x_i, x_j]


@dataclass
class TrwResult:
    pseudomarginals: PseudoMarginals
    messages: dict  # (i, j) -> GriddedFn1D on node j's grid
    tau: np.ndarray
    mutual_info: np.ndarray  # per graph edge, 0 for skipped edges
    entropies: np.ndarray
    q_value: float = float("nan")
    converged: bool = False
    iterations: int = 0
    grid: Grid1D = field(default_factory=lambda: DEFAULT_GRID)


def _basis_on_grid(grid, spec):
    tab = legendre_table(grid.nodes, max(spec.m1, spec.m2))
    return tab[:, 1:spec.m1 + 1], tab[:, 1:spec.m2 + 1]


def _potentials(theta, grid):
    """Vertex log-potentials ``(d, n)`` and edge log-potentials
    ``(E, n, n)`` indexed ``[x_i, x_j]``."""
    phi1, phi2 = _basis_on_grid(grid, theta.spec)
    g = theta.theta_v @ phi1.T
    G = np.einsum("ak,ekl,bl->eab", phi2, theta.theta_e, phi2, optimize=True)
    return g, G


def _normalize_log(v, logw):
    return v - (logsumexp(v, axis=-1, keepdims=True) + logw)


def _log_matvec(expA, shift, v, transpose):
    """log of ``sum_a exp(A[a, b] + v[a])`` (transpose=True, result over b)
    or ``sum_b exp(A[a, b] + v[b])`` (result over a), batched over edges.
    ``expA = exp(A - shift)`` with ``shift`` broadcast along the summed axis."""
    vmax = v.max(axis=1, keepdims=True)
    ev = np.exp(v - vmax)
    if transpose:
        s = np.einsum("eab,ea->eb", expA, ev)
    else:
        s = np.einsum("eab,eb->ea", expA, ev)
    with np.errstate(divide="ignore"):
        return np.log(s) + shift + vmax


def bp_run(theta, alpha, grid=DEFAULT_GRID, max_iter=500, tol=1e-6, messages=None,
           raise_on_fail=True):
    """Run synchronous functional belief propagation to its fixed point.

    ``alpha`` is an EdgeWeights aligned with ``theta.graph``. ``messages``
    may carry a previous result's messages as a warm start. Convergence is
    declared when the largest absolute change in any belief density falls
    below ``tol``.
    """
    graph = theta.graph
    d, n = graph.d, grid.n_points
    logw = np.log(grid.weight)
    a_all = np.asarray(alpha.alpha, dtype=float)
    norms = theta.edge_norms()
    active = np.flatnonzero(norms > 0)
    if np.any(a_all[active] <= 0):
        bad = [graph.edges[k] for k in active if a_all[k] <= 0]
        raise InvalidWeightsError(f"zero edge weight on edges with nonzero parameters: {bad}")

    g, G = _potentials(theta, grid)
    edges = [graph.edges[k] for k in active]
    a = a_all[active]
    Ea = len(edges)
    src = np.array([e[0] for e in edges], dtype=int)
    dst = np.array([e[1] for e in edges], dtype=int)
    A = G[active] / a[:, None, None]

    # log messages: row 2k is i->j (a function of x_j), row 2k+1 is j->i
    logM = np.zeros((2 * Ea, n))
    if messages:
        for k, (i, j) in enumerate(edges):
            for row, key in ((2 * k, (i, j)), (2 * k + 1, (j, i))):
                if key in messages:
                    logM[row] = np.log(np.maximum(messages[key].values, LOG_FLOOR))
        logM = _normalize_log(logM, logw)

    target = np.empty(2 * Ea, dtype=int)
    target[0::2] = dst
    target[1::2] = src
    weights = np.repeat(a, 2)
    incidence = sparse.csr_matrix((weights, (target, np.arange(2 * Ea))), shape=(d, 2 * Ea))

    if Ea:
        col_shift = A.max(axis=1, keepdims=True)  # over x_i, per x_j
        row_shift = A.max(axis=2, keepdims=True)  # over x_j, per x_i
        expA_col = np.exp(A - col_shift)
        expA_row = np.exp(A - row_shift)
        col_shift = col_shift[:, 0, :]
        row_shift = row_shift[:, :, 0]

    def beliefs(lm):
        lb = g + incidence @ lm if Ea else g.copy()
        return _normalize_log(lb, logw)

    prev = None
    converged = False
    it = 0
    delta = np.inf
    for it in range(1, max_iter + 1):
        logb = beliefs(logM)
        if Ea == 0:
            converged = True
            break
        if prev is not None:
            delta = float(np.abs(np.exp(logb) - np.exp(prev)).max())
            if delta < tol:
                converged = True
                break
        v = logb[src] - logM[1::2]  # over x_i
        u = logb[dst] - logM[0::2]  # over x_j
        new = np.empty_like(logM)
        new[0::2] = _log_matvec(expA_col, col_shift, v, transpose=True)
        new[1::2] = _log_matvec(expA_row, row_shift, u, transpose=False)
        bad = ~np.all(np.isfinite(new), axis=1)
        if np.any(bad):
            new[bad] = _exact_messages(A, v, u, np.flatnonzero(bad))
        logM = _normalize_log(new, logw)
        prev = logb
    if not converged:
        msg = f"belief propagation did not converge in {max_iter} iterations (delta={delta:.3g})"
        if raise_on_fail:
            raise BPNotConverged(msg, iterations=it, delta=delta)
        log.warning(msg)

    result = _assemble(theta, grid, g, A, edges, active, logb, logM)
    result.converged = converged
    result.iterations = it
    result.q_value = q_value(theta, alpha, result)
    return result


def _exact_messages(A, v, u, rows):
    out = []
    for r in rows:
        k = r // 2
        if r % 2 == 0:
            out.append(logsumexp(A[k] + v[k][:, None], axis=0))
        else:
            out.append(logsumexp(A[k] + u[k][None, :], axis=1))
    return np.array(out)


def _assemble(theta, grid, g, A, edges, active, logb, logM):
    spec, graph = theta.spec, theta.graph
    d = graph.d
    w = grid.weight
    phi1, phi2 = _basis_on_grid(grid, spec)
    qi = np.exp(logb)
    tau_v = (qi @ phi1) * w  # (d, m1)
    ent = -(qi * logb).sum(axis=1) * w

    mean2 = (qi @ phi2) * w  # (d, m2)
    tau_e = np.einsum("ek,el->ekl", mean2[[e[0] for e in graph.edges]],
                      mean2[[e[1] for e in graph.edges]]) if graph.n_edges else np.zeros((0, spec.m2, spec.m2))
    mi = np.zeros(graph.n_edges)
    q_ij = {}
    if len(edges):
        src = np.array([e[0] for e in edges])
        dst = np.array([e[1] for e in edges])
        v = logb[src] - logM[1::2]
        u = logb[dst] - logM[0::2]
        logq = A + v[:, :, None] + u[:, None, :]
        logq = logq - (logsumexp(logq, axis=(1, 2), keepdims=True) + 2 * np.log(w))
        q = np.exp(logq)
        qa = q.sum(axis=2) * w
        qb = q.sum(axis=1) * w
        lr = (logq - np.log(np.maximum(qa, LOG_FLOOR))[:, :, None]
              - np.log(np.maximum(qb, LOG_FLOOR))[:, None, :])
        mi_active = (q * lr).sum(axis=(1, 2)) * w * w
        tau_active = np.einsum("ak,eab,bl->ekl", phi2, q, phi2, optimize=True) * w * w
        for idx, k in enumerate(active):
            mi[k] = mi_active[idx]
            tau_e[k] = tau_active[idx]
            q_ij[graph.edges[k]] = GriddedFn2D(grid, q[idx])
    for k, e in enumerate(graph.edges):
        if e not in q_ij:
            q_ij[e] = GriddedFn2D(grid, np.outer(qi[e[0]], qi[e[1]]))

    messages = {}
    for k, (i, j) in enumerate(edges):
        messages[(i, j)] = GriddedFn1D(grid, np.exp(logM[2 * k]))
        messages[(j, i)] = GriddedFn1D(grid, np.exp(logM[2 * k + 1]))
    pm = PseudoMarginals([GriddedFn1D(grid, qi[i]) for i in range(d)], q_ij)
    tau = np.concatenate([tau_v.ravel(), tau_e.ravel()])
    return TrwResult(pm, messages, tau, mi, ent, grid=grid)


def pseudo_moments(pm, spec, graph):
    """Expected statistics under pseudomarginals, in the flat parameter layout."""
    grid = pm.q_i[0].grid
    w = grid.weight
    phi1, phi2 = _basis_on_grid(grid, spec)
    tau_v = np.array([(q.values @ phi1) * w for q in pm.q_i])
    tau_e = np.array([phi2.T @ pm.q_ij[e].values @ phi2 * w * w for e in graph.edges])
    return np.concatenate([tau_v.ravel(), tau_e.ravel()])


def q_value(theta, alpha, result):
    """Tree-reweighted bound ``<theta, tau> + sum H_i - sum alpha_ij I_ij``."""
    a = np.asarray(alpha.alpha, dtype=float)
    return float(theta.flat @ result.tau + result.entropies.sum() - a @ result.mutual_info)


def grad_q(result):
    """Gradient of the bound in theta: the pseudomoments."""
    return result.tau.copy()


def _einsum_logsum(logfactors, scopes, d, keep=()):
    letters = string.ascii_lowercase
    shifts = 0.0
    ops, subs = [], []
    for lf, sc in zip(logfactors, scopes):
        m = lf.max()
        shifts += m
        ops.append(np.exp(lf - m))
        subs.append("".join(letters[s] for s in sc))
    expr = ",".join(subs) + "->" + "".join(letters[s] for s in keep)
    return np.einsum(expr, *ops, optimize="optimal"), shifts


def _grid_factors(theta, grid):
    g, G = _potentials(theta, grid)
    factors = [g[i] for i in range(theta.graph.d)] + [G[k] for k in range(theta.graph.n_edges)]
    scopes = [(i,) for i in range(theta.graph.d)] + [e for e in theta.graph.edges]
    return factors, scopes


def brute_force_logz(theta, grid=DEFAULT_GRID):
    """log of the full d-dimensional Riemann sum of ``exp <theta, phi(x)>``.
    Exact tensor contraction; restricted to ``d <= 4``."""
    d = theta.graph.d
    if d > 4:
        raise ValueError("brute-force log-partition limited to d <= 4")
    factors, scopes = _grid_factors(theta, grid)
    total, shift = _einsum_logsum(factors, scopes, d)
    return float(np.log(total) + shift + d * np.log(grid.weight))


def brute_force_marginals(theta, grid=DEFAULT_GRID):
    """Exact grid marginals ``(univariate list, {edge: bivariate})`` for
    ``d <= 4``, as densities."""
    d = theta.graph.d
    if d > 4:
        raise ValueError("brute-force marginals limited to d <= 4")
    factors, scopes = _grid_factors(theta, grid)
    w = grid.weight
    uni = []
    for i in range(d):
        m, _ = _einsum_logsum(factors, scopes, d, keep=(i,))
        uni.append(m / (m.sum() * w))
    biv = {}
    for e in theta.graph.edges:
        m, _ = _einsum_logsum(factors, scopes, d, keep=e)
        biv[e] = m / (m.sum() * w * w)
    return uni, biv
