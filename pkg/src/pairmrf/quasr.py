"""Regularized score matching (QUASR).

The Hyvarinen score of a pairwise exponential family is a sum over nodes of
quadratic forms in the parameter groups touching each node. For node ``i``
the *column* ``theta_{.,i}`` stacks the vertex block of ``i`` followed by the
edge blocks ``(i, j)`` for neighbours ``j`` in ascending order; an edge block
appears in the columns of both endpoints with the same (row-major, lower
index first) flattening.

Penalty: ``lam * sum_g w_g ||theta_g||`` over vertex and edge groups. The
nonparametric default is ``w = 1`` for every group. For Gaussian statistics
edge groups get ``w = 2`` so the penalty equals the elementwise l1 norm of
the full symmetric precision matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, legendre_deriv_table
from .exceptions import DegenerateFunctionError, DomainError, NotConverged
from .graphmodel import Graph, ParamVector

log = logging.getLogger(__name__)


def column_maps(graph, spec):
    """Flat-layout indices of each node's column, vertex block first."""
    m1, b = spec.m1, spec.m2 ** 2
    nv = graph.d * m1
    eidx = graph.edge_index()
    maps = []
    for i, nbrs in enumerate(graph.neighbors()):
        parts = [np.arange(i * m1, (i + 1) * m1)]
        for j in nbrs:
            k = eidx[(min(i, j), max(i, j))]
            parts.append(nv + k * b + np.arange(b))
        maps.append(np.concatenate(parts))
    return maps


def group_ids(graph, spec):
    """Group label per flat entry: nodes are ``0..d-1``, edges follow."""
    return np.concatenate([np.repeat(np.arange(graph.d), spec.m1),
                           graph.d + np.repeat(np.arange(graph.n_edges), spec.m2 ** 2)])


@dataclass
class ScoreStats:
    spec: BasisSpec
    graph: Graph
    n: int
    gamma: list  # per node, (p_i, p_i)
    k_cols: list  # per node, node-side linear terms in column coordinates
    col_map: list
    vertex_weight: float = 1.0
    edge_weight: float = 1.0

    @property
    def k_hat(self):
        """Linear term in the flat layout (both endpoint contributions summed)."""
        out = np.zeros(self.spec.n_stats(self.graph.d, self.graph.n_edges))
        for cm, k in zip(self.col_map, self.k_cols):
            np.add.at(out, cm, k)
        return out

    def group_weights(self):
        return np.concatenate([np.full(self.graph.d, float(self.vertex_weight)),
                               np.full(self.graph.n_edges, float(self.edge_weight))])


@dataclass
class GaussStats:
    sigma_hat: np.ndarray
    n: int


def _check_data(data):
    X = np.atleast_2d(np.asarray(data, dtype=float))
    bad = ~np.isfinite(X) | (X < 0.0) | (X > 1.0)
    if np.any(bad):
        r, c = np.argwhere(bad)[0]
        raise DomainError(f"datum at row {r}, column {c} ({X[r, c]!r}) is outside [0, 1]")
    return X


def score_design(data, graph, spec):
    """Per-node design matrices ``a_i(X^r)`` (rows) and linear terms
    ``K_{.,i}(X^r)`` for the bounded-support score on [0, 1]^d."""
    X = _check_data(data)
    n, d = X.shape
    if d != graph.d:
        raise DomainError(f"data has {d} columns, graph has {graph.d} nodes")
    kmax = max(spec.m1, spec.m2)
    phi, d1, d2 = legendre_deriv_table(X, kmax)  # (n, d, kmax+1)
    w = X * (1.0 - X)
    lin = -2.0 * (2.0 * X - 1.0) * w  # multiplies first derivatives
    quad = w * w  # multiplies second derivatives
    m1, m2 = spec.m1, spec.m2
    A_list, K_list = [], []
    for i, nbrs in enumerate(graph.neighbors()):
        a_parts = [w[:, i, None] * d1[:, i, 1:m1 + 1]]
        k_parts = [lin[:, i, None] * d1[:, i, 1:m1 + 1] + quad[:, i, None] * d2[:, i, 1:m1 + 1]]
        for j in nbrs:
            p_other = phi[:, j, 1:m2 + 1]
            dd1 = d1[:, i, 1:m2 + 1]
            dd2 = d2[:, i, 1:m2 + 1]
            if i < j:
                o1 = dd1[:, :, None] * p_other[:, None, :]
                o2 = dd2[:, :, None] * p_other[:, None, :]
            else:
                o1 = p_other[:, :, None] * dd1[:, None, :]
                o2 = p_other[:, :, None] * dd2[:, None, :]
            o1 = o1.reshape(n, -1)
            o2 = o2.reshape(n, -1)
            a_parts.append(w[:, i, None] * o1)
            k_parts.append(lin[:, i, None] * o1 + quad[:, i, None] * o2)
        A_list.append(np.concatenate(a_parts, axis=1))
        K_list.append(np.concatenate(k_parts, axis=1))
    return A_list, K_list


def score_stats(data, graph, spec):
    """Sample Gram matrices and linear terms of the bounded-support
    Hyvarinen score."""
    A_list, K_list = score_design(data, graph, spec)
    n = A_list[0].shape[0]
    gamma = [A.T @ A / n for A in A_list]
    k_cols = [K.mean(axis=0) for K in K_list]
    return ScoreStats(spec, graph, n, gamma, k_cols, column_maps(graph, spec))


def gauss_stats(data):
    """Uncentered second-moment matrix ``(1/n) sum x x^T``."""
    X = np.atleast_2d(np.asarray(data, dtype=float))
    return GaussStats(X.T @ X / X.shape[0], X.shape[0])


def gauss_score_stats(sigma_hat, n=0, penalize_diagonal=True):
    """Express Gaussian score matching on the complete graph with one
    statistic per group (``theta_ii = Omega_ii``, ``theta_ij = Omega_ij``)."""
    S = np.asarray(sigma_hat, dtype=float)
    d = S.shape[0]
    graph = Graph.complete(d)
    spec = BasisSpec(1, 1)
    gamma, k_cols = [], []
    for i in range(d):
        order = [i] + [j for j in range(d) if j != i]
        gamma.append(S[np.ix_(order, order)])
        k = np.zeros(d)
        k[0] = -1.0
        k_cols.append(k)
    return ScoreStats(spec, graph, n, gamma, k_cols, column_maps(graph, spec),
                      vertex_weight=1.0 if penalize_diagonal else 0.0, edge_weight=2.0)


def omega_to_param(omega):
    omega = np.asarray(omega, dtype=float)
    d = omega.shape[0]
    graph = Graph.complete(d)
    theta_e = np.array([omega[i, j] for i, j in graph.edges]).reshape(-1, 1, 1)
    return ParamVector(BasisSpec(1, 1), graph, np.diag(omega).reshape(d, 1), theta_e)


def param_to_omega(theta):
    omega = np.diag(theta.theta_v[:, 0]).astype(float)
    for k, (i, j) in enumerate(theta.graph.edges):
        omega[i, j] = omega[j, i] = theta.theta_e[k, 0, 0]
    return omega


def _flat(theta):
    return theta.flat if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)


def _group_norms(x, gid, n_groups):
    return np.sqrt(np.bincount(gid, weights=x * x, minlength=n_groups))


def quadratic_part(theta, stats):
    """``1/2 sum_i theta_{.,i}^T Gamma_i theta_{.,i} + K^T theta``."""
    x = _flat(theta)
    val = 0.0
    for G, k, cm in zip(stats.gamma, stats.k_cols, stats.col_map):
        t = x[cm]
        val += 0.5 * t @ G @ t + k @ t
    return float(val)


def quadratic_grad(theta, stats):
    x = _flat(theta)
    out = np.zeros_like(x)
    for G, k, cm in zip(stats.gamma, stats.k_cols, stats.col_map):
        np.add.at(out, cm, G @ x[cm] + k)
    return out


def weighted_penalty(theta, stats):
    x = _flat(theta)
    n_groups = stats.graph.d + stats.graph.n_edges
    gid = group_ids(stats.graph, stats.spec)
    return float(stats.group_weights() @ _group_norms(x, gid, n_groups))


def sm_objective(theta, stats, lam):
    """Penalized score-matching objective."""
    return quadratic_part(theta, stats) + lam * weighted_penalty(theta, stats)


def heldout_hyvarinen(theta, heldout_stats):
    """Unpenalized empirical Hyvarinen score on held-out statistics."""
    return quadratic_part(theta, heldout_stats)


def _free_vertex_solution(stats):
    """Minimizer with all edges at zero and vertex groups unpenalized."""
    x = np.zeros(stats.spec.n_stats(stats.graph.d, stats.graph.n_edges))
    m1 = stats.spec.m1
    for G, k, cm in zip(stats.gamma, stats.k_cols, stats.col_map):
        Gv = G[:m1, :m1]
        x[cm[:m1]] = -np.linalg.lstsq(Gv, k[:m1], rcond=None)[0]
    return x


def lambda_start_quasr(stats):
    """Smallest penalty at which every penalized group is exactly zero:
    ``max_g ||grad_g|| / w_g`` at the unpenalized-group solution (with
    unit weights and a penalized vertex, ``max ||K_hat_g||``)."""
    x0 = np.zeros(stats.spec.n_stats(stats.graph.d, stats.graph.n_edges))
    if stats.vertex_weight == 0:
        x0 = _free_vertex_solution(stats)
    grad = quadratic_grad(x0, stats)
    n_groups = stats.graph.d + stats.graph.n_edges
    norms = _group_norms(grad, group_ids(stats.graph, stats.spec), n_groups)
    wts = stats.group_weights()
    mask = wts > 0
    if not np.any(mask):
        return 0.0
    return float((norms[mask] / wts[mask]).max())


@dataclass
class FactorCache:
    """Per-node inverses ``(Gamma_i + rho I)^{-1}`` from eigendecompositions."""

    rho: float
    inverses: list
    eigvals: list = field(default_factory=list)
    eigvecs: list = field(default_factory=list)

    def solve(self, i, rhs):
        return self.inverses[i] @ rhs


def factor_cache(stats, rho=1.0):
    if rho <= 0:
        raise ValueError("rho must be positive")
    inv, vals, vecs = [], [], []
    for G in stats.gamma:
        lam, Q = np.linalg.eigh(0.5 * (G + G.T))
        inv.append((Q / (lam + rho)) @ Q.T)
        vals.append(lam)
        vecs.append(Q)
    return FactorCache(rho, inv, vals, vecs)


def extend_inverse(inv_old, b, C, rho):
    """Inverse of ``[[Gamma, b], [b^T, C]] + rho I`` from the cached
    ``(Gamma + rho I)^{-1}`` using the Schur complement of the new block."""
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if b.shape[0] != inv_old.shape[0]:
        b = b.T
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Hb = inv_old @ b
    schur = C + rho * np.eye(C.shape[0]) - b.T @ Hb
    S_inv = np.linalg.inv(schur)
    top = inv_old + Hb @ S_inv @ Hb.T
    off = -Hb @ S_inv
    return np.block([[top, off], [off.T, S_inv]])


def extend_factor_cache(cache, new_blocks):
    """Grow every node's cached inverse; ``new_blocks[i] = (b_i, C_i)``
    holds the cross and new-diagonal parts of the enlarged Gram matrix."""
    inv = [extend_inverse(H, b, C, cache.rho) for H, (b, C) in zip(cache.inverses, new_blocks)]
    return FactorCache(cache.rho, inv)


@dataclass
class QuasrFit:
    theta: ParamVector
    objective: float
    iterations: int
    converged: bool
    lam: float
    state: dict = field(default_factory=dict)


def admm_fit(stats, lam, rho=1.0, tol=1e-4, max_iter=20000, cache=None, warm=None,
             raise_on_fail=True):
    """Consensus ADMM for penalized score matching.

    Each node solves its own column against the shared consensus ``z``;
    duplicated edge blocks are then averaged and group-shrunk, followed by
    a dual ascent step. Stops when the relative l1 change of the local
    copies and their relative disagreement with ``z`` are both below
    ``tol``. ``warm`` takes the ``state`` of a previous fit.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    spec, graph = stats.spec, stats.graph
    p = spec.n_stats(graph.d, graph.n_edges)
    n_groups = graph.d + graph.n_edges
    gid = group_ids(graph, spec)
    wts = stats.group_weights()

    if stats.vertex_weight > 0 and lam >= lambda_start_quasr(stats):
        theta = ParamVector.zeros(spec, graph)
        return QuasrFit(theta, 0.0, 0, True, lam, {})

    cache = cache or factor_cache(stats, rho)
    if cache.rho != rho:
        raise ValueError("factor cache built for a different rho")
    owner = np.concatenate(stats.col_map)
    copies = np.bincount(owner, minlength=p).astype(float)
    bounds = np.cumsum([0] + [len(cm) for cm in stats.col_map])
    kloc = np.concatenate(stats.k_cols)
    # threshold per group: lam * w_g / (rho * number of copies)
    n_copies = np.bincount(gid, weights=copies, minlength=n_groups) / np.bincount(gid, minlength=n_groups)
    thresh = lam * wts / (rho * n_copies)

    if warm:
        z = warm["z"].copy()
        y = warm["y"].copy()
    else:
        z = np.zeros(p)
        y = np.zeros(owner.size)
    theta_loc = z[owner].copy()
    rel = primal = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        rhs = -kloc - y + rho * z[owner]
        new_loc = np.empty_like(theta_loc)
        for i in range(graph.d):
            s = slice(bounds[i], bounds[i + 1])
            new_loc[s] = cache.solve(i, rhs[s])
        v = np.bincount(owner, weights=new_loc + y / rho, minlength=p) / copies
        norms = _group_norms(v, gid, n_groups)
        scale = np.where(norms > thresh, 1.0 - thresh / np.where(norms > 0, norms, 1.0), 0.0)
        z = v * scale[gid]
        resid = new_loc - z[owner]
        y = y + rho * resid
        denom = np.abs(new_loc).sum()
        change = np.abs(new_loc - theta_loc).sum()
        theta_loc = new_loc
        if denom == 0:
            rel = change
            primal = np.abs(resid).sum()
        else:
            rel = change / denom
            primal = np.abs(resid).sum() / denom
        if rel < tol and primal < tol:
            converged = True
            break
    if not converged:
        msg = f"ADMM did not converge in {max_iter} iterations (change={rel:.3g}, primal={primal:.3g})"
        if raise_on_fail:
            raise NotConverged(msg, {"relative_change": rel, "primal": primal})
        log.warning(msg)
    theta = ParamVector.from_flat(spec, graph, z)
    state = {"z": z, "y": y, "primal_max": float(np.abs(theta_loc - z[owner]).max())}
    return QuasrFit(theta, sm_objective(theta, stats, lam), it, converged, lam, state)


def soft_threshold(x, lam):
    return np.sign(x) * max(abs(x) - lam, 0.0)


def gauss_objective(omega, sigma_hat, lam, penalize_diagonal=True):
    """``trace(1/2 Omega S Omega - Omega) + lam ||Omega||_1``."""
    O = np.asarray(omega, dtype=float)
    S = np.asarray(sigma_hat, dtype=float)
    pen = np.abs(O).sum()
    if not penalize_diagonal:
        pen -= np.abs(np.diag(O)).sum()
    return float(0.5 * np.trace(O @ S @ O) - np.trace(O) + lam * pen)


def gauss_cd_fit(sigma_hat, lam, tol=1e-8, max_iter=10000, omega0=None,
                 penalize_diagonal=True, raise_on_fail=True):
    """Cyclic coordinate descent for Gaussian score matching.

    Sweeps ``i = 1..d``, ``j = i..d`` replacing ``Omega_ij`` (and its mirror)
    with the exact minimizer of the objective in that coordinate,
    ``S(-(r_ij - 2 [i == j]) / (S_ii + S_jj), 2 lam / (S_ii + S_jj))``,
    where ``r_ij`` collects the inner products excluding ``Omega_ij``. On
    unit-variance data the threshold is ``lam``. Starts from the identity;
    no positive-definiteness constraint is imposed.
    """
    S = np.asarray(sigma_hat, dtype=float)
    d = S.shape[0]
    diag = np.diag(S)
    if np.any(diag <= 0):
        raise DegenerateFunctionError("sample second-moment matrix has a zero diagonal entry")
    if penalize_diagonal and lam >= 1.0:
        # the zero matrix satisfies the optimality conditions
        return np.zeros((d, d))
    O = np.eye(d) if omega0 is None else np.array(omega0, dtype=float, copy=True)
    converged = False
    it = 0
    delta = np.inf
    for it in range(1, max_iter + 1):
        delta = 0.0
        for i in range(d):
            for j in range(i, d):
                old = O[i, j]
                Dn = diag[i] + diag[j]
                if i == j:
                    rest = 2.0 * (O[:, i] @ S[:, i] - old * diag[i])
                    target = -(rest - 2.0) / Dn
                    thr = 2.0 * lam / Dn if penalize_diagonal else 0.0
                else:
                    rest = (O[:, i] @ S[:, j] - old * S[j, j]) + (O[:, j] @ S[:, i] - old * S[i, i])
                    target = -rest / Dn
                    thr = 2.0 * lam / Dn
                new = soft_threshold(target, thr)
                if new != old:
                    O[i, j] = O[j, i] = new
                    delta = max(delta, abs(new - old))
        if delta < tol:
            converged = True
            break
    if not converged:
        msg = f"coordinate descent did not converge in {max_iter} sweeps (delta={delta:.3g})"
        if raise_on_fail:
            raise NotConverged(msg, {"max_change": delta})
        log.warning(msg)
    return O


def quasr_path(stats, lambdas, rho=1.0, tol=1e-4, max_iter=20000):
    """Warm-started ADMM fits along a decreasing penalty sequence sharing one
    factor cache."""
    cache = factor_cache(stats, rho)
    fits, warm = [], None
    for lam in lambdas:
        fit = admm_fit(stats, lam, rho=rho, tol=tol, max_iter=max_iter, cache=cache, warm=warm)
        fits.append(fit)
        if fit.state:
            warm = fit.state
    return fits


def gauss_cd_path(sigma_hat, lambdas, tol=1e-6, max_iter=10000, penalize_diagonal=True):
    """Warm-started coordinate descent along a decreasing penalty sequence."""
    out, omega = [], None
    for lam in lambdas:
        omega = gauss_cd_fit(sigma_hat, lam, tol=tol, max_iter=max_iter, omega0=omega,
                             penalize_diagonal=penalize_diagonal)
        out.append(omega)
    return out
