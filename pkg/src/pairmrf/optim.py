"""Proximal-gradient solvers and the variational regularized MLE.

Solvers work on flat parameter vectors laid out as an unpenalized prefix of
length ``n_free`` followed by equal-size penalized groups of ``block``
entries, which is exactly the ParamVector layout (vertex blocks, then edge
blocks).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .basis import stat_matrix
from .exceptions import BPNotConverged, FitFailure, StepFailure
from .graphmodel import ParamVector
from .spantree import EdgeWeights
from . import trw

log = logging.getLogger(__name__)

MAX_DOUBLINGS = 60
L_MIN, L_MAX = 1e-8, 1e12
NULL_STEP = 1e-10


def _blocks(x, n_free, block):
    return x[n_free:].reshape(-1, block)


def group_shrink(v, kappa, n_free, block):
    """Block soft-thresholding of the penalized groups of a flat vector."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    out = np.array(v, dtype=float, copy=True)
    if kappa == 0 or out.size == n_free:
        return out
    b = _blocks(out, n_free, block)
    norms = np.sqrt((b ** 2).sum(axis=1))
    scale = np.zeros_like(norms)
    keep = norms > kappa
    scale[keep] = 1.0 - kappa / norms[keep]
    b *= scale[:, None]
    return out


def prox_group(v, kappa):
    """Proximal map of ``kappa * group_norm`` applied to a ParamVector:
    vertex blocks pass through, edge blocks shrink toward zero."""
    flat = group_shrink(v.flat, kappa, v.n_free, v.spec.m2 ** 2)
    return ParamVector.from_flat(v.spec, v.graph, flat)


def penalty(x, n_free, block):
    if x.size == n_free:
        return 0.0
    return float(np.sqrt((_blocks(x, n_free, block) ** 2).sum(axis=1)).sum())


@dataclass
class ProxProblem:
    """``loss(x) -> (value, gradient)`` plus ``lam`` times the group norm of
    the blocks following the first ``n_free`` entries."""

    loss: Callable
    lam: float
    n_free: int
    block: int

    def objective(self, x, value=None):
        if value is None:
            value = self.loss(x)[0]
        return value + self.lam * penalty(x, self.n_free, self.block)


@dataclass
class ProxResult:
    x: np.ndarray
    objective: float
    iterations: int
    converged: bool
    L: float
    history: list = field(default_factory=list)
    grad: np.ndarray = None


def secant_l0(theta_t, theta_prev, grad_t, grad_prev, fallback=None):
    """Secant estimate of the local Lipschitz constant from two iterates and
    their loss gradients, clamped to ``[1e-8, 1e12]``."""
    dx = np.asarray(theta_t) - np.asarray(theta_prev)
    nrm = float(dx @ dx)
    if nrm == 0.0:
        return fallback
    val = float(dx @ (np.asarray(grad_t) - np.asarray(grad_prev))) / nrm
    if not np.isfinite(val):
        return fallback
    return min(max(val, L_MIN), L_MAX)


def _safe_loss(problem, x):
    try:
        val, grad = problem.loss(x)
    except BPNotConverged:
        return None
    if not np.isfinite(val):
        return None
    return val, np.asarray(grad, dtype=float)


def _backtrack(problem, y, fy, gy, L0, delta):
    """Smallest ``L = delta**l * L0`` passing the sufficient-decrease test
    ``f(p) <= f(y) + <grad f(y), p - y> + L/2 ||p - y||^2``."""
    L = L0
    scale = max(1.0, float(np.abs(y).max())) if y.size else 1.0
    oracle_failed = False
    for _ in range(MAX_DOUBLINGS + 1):
        p = group_shrink(y - gy / L, problem.lam / L, problem.n_free, problem.block)
        if np.abs(p - y).max() <= NULL_STEP * scale:
            if oracle_failed:
                raise StepFailure("loss oracle failed at every trial point down to the "
                                  f"step resolution (L={L:.3g})")
            # step below resolution: an inexact loss (e.g. message passing
            # run to a tolerance) cannot certify descent, so stay put
            return y, fy, gy, L
        out = _safe_loss(problem, p)
        oracle_failed = out is None
        if out is not None:
            fp, gp = out
            diff = p - y
            bound = fy + float(gy @ diff) + 0.5 * L * float(diff @ diff)
            if fp <= bound + 1e-12 * max(1.0, abs(fy)):
                return p, fp, gp, L
        L *= delta
    raise StepFailure(f"line search exceeded {MAX_DOUBLINGS} doublings (L={L:.3g})")


def ista(problem, x0, max_iter=1000, obj_tol=1e-4, L0=1.0, delta=2.0, secant=False,
         callback=None):
    """Proximal gradient descent with backtracking.

    Stops once the objective improves by less than ``obj_tol`` or after
    ``max_iter`` iterations. The objective is non-increasing across
    iterations. Without ``secant`` each search starts from the previously
    accepted ``L``.
    """
    x = np.array(x0, dtype=float, copy=True)
    out = _safe_loss(problem, x)
    if out is None:
        raise FitFailure("loss oracle failed at the initial point")
    fx, gx = out
    obj = problem.objective(x, fx)
    history = [obj]
    L = L0
    x_prev = g_prev = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        start = L
        if secant and x_prev is not None:
            start = secant_l0(x, x_prev, gx, g_prev, fallback=L)
        p, fp, gp, L = _backtrack(problem, x, fx, gx, start, delta)
        new_obj = problem.objective(p, fp)
        x_prev, g_prev = x, gx
        x, fx, gx = p, fp, gp
        improvement = obj - new_obj
        obj = new_obj
        history.append(obj)
        if callback is not None:
            callback({"iteration": it, "objective": obj, "L": L, "x": x})
        if improvement < obj_tol:
            converged = True
            break
    return ProxResult(x, obj, it, converged, L, history, gx)


def fista_momentum(a_t):
    """Next term of the FISTA momentum sequence."""
    return (1.0 + math.sqrt(1.0 + 4.0 * a_t * a_t)) / 2.0


def fista(problem, x0, max_iter=1000, obj_tol=1e-4, L0=1.0, delta=2.0, secant=False,
          callback=None):
    """Accelerated proximal gradient with backtracking (``a_1 = 1``).

    Iterates are not monotone; the best point visited is returned.
    """
    x = np.array(x0, dtype=float, copy=True)
    out = _safe_loss(problem, x)
    if out is None:
        raise FitFailure("loss oracle failed at the initial point")
    fx, gx = out
    obj = problem.objective(x, fx)
    best = (obj, x.copy(), gx)
    history = [obj]
    y, fy, gy = x, fx, gx
    a = 1.0
    L = L0
    y_prev = gy_prev = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        start = L
        if secant and y_prev is not None:
            start = secant_l0(y, y_prev, gy, gy_prev, fallback=L)
        p, fp, gp, L = _backtrack(problem, y, fy, gy, start, delta)
        new_obj = problem.objective(p, fp)
        history.append(new_obj)
        if new_obj < best[0]:
            best = (new_obj, p.copy(), gp)
        a_next = fista_momentum(a)
        y_prev, gy_prev = y, gy
        y = p + ((a - 1.0) / a_next) * (p - x)
        a = a_next
        change = abs(obj - new_obj)
        x, obj = p, new_obj
        if callback is not None:
            callback({"iteration": it, "objective": obj, "L": L, "x": x})
        if change < obj_tol:
            converged = True
            break
        out = _safe_loss(problem, y)
        if out is None:
            # momentum point failed; restart from the current iterate
            y, fy, gy, a = x, fp, gp, 1.0
        else:
            fy, gy = out
    return ProxResult(best[1], best[0], it, converged, L, history, best[2])


def kkt_residual(x, grad, lam, n_free, block):
    """Largest violation of the first-order conditions of
    ``loss + lam * group_norm`` at ``x`` given the loss gradient there."""
    res = float(np.abs(grad[:n_free]).max()) if n_free else 0.0
    if x.size == n_free:
        return res
    xb = _blocks(x, n_free, block)
    gb = _blocks(grad, n_free, block)
    norms = np.sqrt((xb ** 2).sum(axis=1))
    gnorms = np.sqrt((gb ** 2).sum(axis=1))
    zero = norms == 0
    if np.any(zero):
        res = max(res, float(np.maximum(gnorms[zero] - lam, 0.0).max()))
    if np.any(~zero):
        sub = gb[~zero] + lam * xb[~zero] / norms[~zero, None]
        res = max(res, float(np.sqrt((sub ** 2).sum(axis=1)).max()))
    return res


# ---------------------------------------------------------------------------
# variational regularized maximum likelihood


def empirical_moments(data, graph, spec):
    """Sample mean of the sufficient statistics."""
    return stat_matrix(data, graph, spec).mean(axis=0)


def lambda_max(mu_hat, tau, n_free, block):
    """Largest edge-block norm of ``mu_hat - tau``."""
    diff = np.asarray(mu_hat) - np.asarray(tau)
    if diff.size == n_free:
        return 0.0
    return float(np.sqrt((_blocks(diff, n_free, block) ** 2).sum(axis=1)).max())


def lambda_start_mle(mu_hat):
    """Smallest penalty at which every edge block is zero:
    ``max_ij || mu_ij - mu_i mu_j^T ||``. ``mu_hat`` is a ParamVector holding
    moments; requires ``m2 <= m1`` so the needed vertex moments are present."""
    spec, graph = mu_hat.spec, mu_hat.graph
    if graph.n_edges == 0:
        return 0.0
    if spec.m2 > spec.m1:
        raise ValueError("lambda_start_mle needs m2 <= m1")
    mv = mu_hat.theta_v[:, :spec.m2]
    ii = [e[0] for e in graph.edges]
    jj = [e[1] for e in graph.edges]
    diff = mu_hat.theta_e - mv[ii][:, :, None] * mv[jj][:, None, :]
    return float(np.sqrt((diff ** 2).sum(axis=(1, 2))).max())


@dataclass
class FitResult:
    theta: ParamVector
    objective: float
    iterations: int
    converged: bool
    lam: float
    history: list = field(default_factory=list)
    trw: object = None


class TrwLoss:
    """``Q(theta) - <theta, mu_hat>`` and its gradient ``tau - mu_hat``;
    messages from the latest successful run seed the next one."""

    def __init__(self, spec, graph, mu_hat, alpha, grid=None, bp_tol=1e-6, bp_max_iter=500):
        self.spec, self.graph = spec, graph
        self.mu_hat = np.asarray(mu_hat, dtype=float)
        self.alpha = alpha
        self.grid = grid or trw.DEFAULT_GRID
        self.bp_tol, self.bp_max_iter = bp_tol, bp_max_iter
        self.messages = None
        self.last = None
        self.n_calls = 0

    def __call__(self, x):
        self.n_calls += 1
        theta = ParamVector.from_flat(self.spec, self.graph, x)
        res = trw.bp_run(theta, self.alpha, grid=self.grid, max_iter=self.bp_max_iter,
                         tol=self.bp_tol, messages=self.messages)
        self.messages = res.messages
        self.last = res
        return res.q_value - float(x @ self.mu_hat), res.tau - self.mu_hat


def fit_vertex_only(mu_hat, spec, graph, grid=None, tol=1e-10, max_iter=200):
    """Independent univariate exponential-series MLEs (edge blocks zero),
    solved per node by damped Newton on the gridded log-partition."""
    from .basis import legendre_table

    grid = grid or trw.DEFAULT_GRID
    phi = legendre_table(grid.nodes, spec.m1)[:, 1:]
    w = grid.weight
    theta = ParamVector.zeros(spec, graph)
    mu_v = np.asarray(mu_hat, dtype=float)[:graph.d * spec.m1].reshape(graph.d, spec.m1)

    def logz(t):
        s = phi @ t
        m = s.max()
        return m + math.log(np.exp(s - m).sum() * w)

    for i in range(graph.d):
        t = np.zeros(spec.m1)
        f = logz(t) - t @ mu_v[i]
        for _ in range(max_iter):
            s = phi @ t
            p = np.exp(s - s.max())
            p /= p.sum()
            mean = p @ phi
            cov = (phi * p[:, None]).T @ phi - np.outer(mean, mean)
            g = mean - mu_v[i]
            if np.abs(g).max() < tol:
                break
            step = np.linalg.solve(cov + 1e-12 * np.eye(spec.m1), g)
            eta = 1.0
            while eta > 1e-12:
                tn = t - eta * step
                fn = logz(tn) - tn @ mu_v[i]
                if fn <= f + 1e-4 * eta * float(g @ -step) or fn <= f:
                    break
                eta *= 0.5
            t, f = tn, fn
        theta.theta_v[i] = t
    return theta


def fit_trw_mle(data, graph, spec, lam, alpha=None, solver="ista", theta0=None, grid=None,
                max_iter=1000, obj_tol=1e-4, bp_tol=1e-6, bp_max_iter=500, secant=True,
                mu_hat=None, callback=None):
    """Variational regularized MLE: minimize
    ``Q(theta) - <theta, mu_hat> + lam * group_norm(theta)`` by ISTA or FISTA.

    When ``lam`` is at least the zero-edge threshold the problem separates
    into per-node univariate fits, which are solved directly.
    """
    data = np.asarray(data, dtype=float)
    if mu_hat is None:
        mu_hat = empirical_moments(data, graph, spec)
    if alpha is None:
        alpha = EdgeWeights.ones(graph)
    grid = grid or trw.DEFAULT_GRID
    mu_pv = ParamVector.from_flat(spec, graph, mu_hat)
    if graph.n_edges == 0 or (spec.m2 <= spec.m1 and lam >= lambda_start_mle(mu_pv)):
        theta = fit_vertex_only(mu_hat, spec, graph, grid)
        loss = TrwLoss(spec, graph, mu_hat, alpha, grid, bp_tol, bp_max_iter)
        val, _ = loss(theta.flat)
        return FitResult(theta, val, 0, True, lam, [val], loss.last)

    loss = TrwLoss(spec, graph, mu_hat, alpha, grid, bp_tol, bp_max_iter)
    problem = ProxProblem(loss, lam, graph.d * spec.m1, spec.m2 ** 2)
    x0 = theta0.flat if theta0 is not None else fit_vertex_only(mu_hat, spec, graph, grid).flat
    runner = {"ista": ista, "fista": fista}[solver]
    try:
        res = runner(problem, x0, max_iter=max_iter, obj_tol=obj_tol, secant=secant,
                     callback=callback)
    except StepFailure as exc:
        raise FitFailure(str(exc), {"lam": lam, "loss_calls": loss.n_calls}) from exc
    theta = ParamVector.from_flat(spec, graph, res.x)
    # keep the returned TRW state consistent with the returned parameters
    if loss.last is None or not np.array_equal(loss.last.tau, res.grad + loss.mu_hat):
        loss(res.x)
    return FitResult(theta, res.objective, res.iterations, res.converged, lam, res.history,
                     loss.last)


@dataclass
class PathResult:
    lambdas: list
    fits: list

    @property
    def thetas(self):
        return [f.theta for f in self.fits]


def auto_lambdas(lam_start, count=30, decades=2.0):
    """Log-spaced decreasing path from ``lam_start`` down ``decades`` orders."""
    if lam_start <= 0:
        return [0.0]
    return list(lam_start * np.logspace(0.0, -decades, count))


def reg_path(data, graph, spec, lambdas, fitter=None, **fit_kwargs):
    """Warm-started fits along a strictly decreasing penalty sequence.

    ``fitter(lam, theta0)`` returns a FitResult; the default wraps
    :func:`fit_trw_mle`. The first fit starts from the univariate
    (zero-edge) solution. A failing fit ends the path; completed fits are
    kept and the error is attached as ``path.error``.
    """
    lambdas = [float(v) for v in lambdas]
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambdas must be strictly decreasing")
    data = np.asarray(data, dtype=float)
    if fitter is None:
        mu_hat = empirical_moments(data, graph, spec)
        grid = fit_kwargs.get("grid") or trw.DEFAULT_GRID

        def fitter(lam, theta0):
            return fit_trw_mle(data, graph, spec, lam, theta0=theta0, mu_hat=mu_hat, **fit_kwargs)

        theta0 = fit_vertex_only(mu_hat, spec, graph, grid)
    else:
        theta0 = None
    path = PathResult([], [])
    path.error = None
    for lam in lambdas:
        try:
            fit = fitter(lam, theta0)
        except (FitFailure, BPNotConverged) as exc:
            log.warning("path stopped at lambda=%g: %s", lam, exc)
            path.error = exc
            break
        path.lambdas.append(lam)
        path.fits.append(fit)
        theta0 = fit.theta
    return path
