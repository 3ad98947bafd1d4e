import math

import numpy as np
import pytest
from scipy.optimize import root

from pairmrf import optim, trw
from pairmrf.basis import BasisSpec, legendre_table
from pairmrf.graphmodel import Graph, ParamVector
from pairmrf.exceptions import BPNotConverged, StepFailure
from pairmrf.optim import (ProxProblem, fista, fista_momentum, group_shrink, ista, kkt_residual,
                           lambda_start_mle, prox_group, secant_l0)
from pairmrf.spantree import EdgeWeights

from conftest import chain, random_theta, sample_grid_density


def least_squares(rng, n=60, n_free=2, n_groups=4, block=3, cond=None):
    p = n_free + n_groups * block
    A = rng.standard_normal((n, p))
    if cond is not None:
        U, _, Vt = np.linalg.svd(A, full_matrices=False)
        A = U @ np.diag(np.geomspace(1.0, 1.0 / math.sqrt(cond), p)) @ Vt
    x_true = np.zeros(p)
    x_true[:n_free] = rng.standard_normal(n_free)
    x_true[n_free:n_free + block] = rng.standard_normal(block)
    b = A @ x_true + 0.1 * rng.standard_normal(n)

    def loss(x):
        r = A @ x - b
        return 0.5 * float(r @ r), A.T @ r

    return loss, p


def test_group_shrink_examples():
    v = np.array([3.0, 4.0])
    assert np.array_equal(group_shrink(v, 0.0, 0, 2), v)
    assert np.allclose(group_shrink(v, 2.5, 0, 2), [1.5, 2.0])
    assert np.array_equal(group_shrink(v, 5.0, 0, 2), [0.0, 0.0])
    # the free prefix passes through
    assert np.allclose(group_shrink(np.array([9.0, 3.0, 4.0]), 2.5, 1, 2), [9.0, 1.5, 2.0])
    with pytest.raises(ValueError):
        group_shrink(v, -1.0, 0, 2)


def numerical_prox_block(v, kappa):
    """Minimizer of 1/2||x - v||^2 + kappa ||x||. Zero when the subgradient
    condition ||v|| <= kappa holds; otherwise a root of the stationarity
    system x - v + kappa x / ||x|| = 0 found numerically from x = v."""
    if np.linalg.norm(v) <= kappa:
        return np.zeros_like(v)
    eq = lambda x: x - v + kappa * x / np.linalg.norm(x)
    sol = root(eq, v, tol=1e-14)
    assert np.abs(eq(sol.x)).max() < 1e-12
    return sol.x


def test_prox_group_matches_numerical_minimizer(rng):
    g = Graph.complete(4)
    spec = BasisSpec(2, 3)
    for _ in range(20):
        v = random_theta(rng, g, spec, scale=rng.uniform(0.1, 3))
        kappa = rng.uniform(0, 4)
        out = prox_group(v, kappa)
        assert np.array_equal(out.theta_v, v.theta_v)
        for k in range(g.n_edges):
            num = numerical_prox_block(v.theta_e[k].ravel(), kappa)
            assert np.abs(out.theta_e[k].ravel() - num).max() < 1e-8


def test_ista_quadratic_fixed_points():
    a = np.array([0.3, -2.0, 0.7])

    def loss(x):
        return 0.5 * float((x - a) @ (x - a)), x - a

    res = ista(ProxProblem(loss, 0.0, 3, 1), np.zeros(3), obj_tol=1e-20, max_iter=100)
    assert np.abs(res.x - a).max() < 1e-8
    lam = 0.5
    res = ista(ProxProblem(loss, lam, 0, 1), np.zeros(3), obj_tol=1e-20, max_iter=100)
    soft = np.sign(a) * np.maximum(np.abs(a) - lam, 0)
    assert np.abs(res.x - soft).max() < 1e-8


def test_ista_monotone_and_kkt(rng):
    for _ in range(10):
        loss, p = least_squares(rng)
        lam = rng.uniform(0.5, 5)
        prob = ProxProblem(loss, lam, 2, 3)
        res = ista(prob, np.zeros(p), obj_tol=1e-12, max_iter=5000)
        hist = np.array(res.history)
        assert np.all(np.diff(hist) <= 1e-12 * np.abs(hist[:-1]).max())
        assert kkt_residual(res.x, res.grad, lam, 2, 3) < 1e-3


def test_ista_fista_agree(rng):
    for _ in range(5):
        loss, p = least_squares(rng)
        prob = ProxProblem(loss, 2.0, 2, 3)
        a = ista(prob, np.zeros(p), obj_tol=1e-14, max_iter=20000)
        b = fista(prob, np.zeros(p), obj_tol=1e-14, max_iter=20000)
        assert np.abs(a.x - b.x).max() < 1e-6
        assert kkt_residual(b.x, b.grad, 2.0, 2, 3) < 1e-3


def test_fista_momentum_sequence():
    assert fista_momentum(1.0) == pytest.approx((1 + math.sqrt(5)) / 2)


def test_fista_faster_on_ill_conditioned(rng):
    loss, p = least_squares(rng, n=80, cond=1e3)
    prob = ProxProblem(loss, 0.1, 2, 3)
    a = ista(prob, np.zeros(p), obj_tol=1e-9, max_iter=50000)
    b = fista(prob, np.zeros(p), obj_tol=1e-9, max_iter=50000)
    assert b.iterations <= a.iterations


def test_secant():
    rng = np.random.default_rng(1)
    x0, x1 = rng.standard_normal(4), rng.standard_normal(4)
    assert secant_l0(x1, x0, 3.5 * x1, 3.5 * x0) == pytest.approx(3.5)
    assert secant_l0(x1, x0, np.ones(4), np.ones(4)) == pytest.approx(1e-8)
    assert secant_l0(x0, x0, x0, x0, fallback=2.0) == 2.0
    g = lambda x: np.exp(x) + x  # gradient of a smooth convex function
    v = secant_l0(x1, x0, g(x1), g(x0))
    assert 0 < v < np.inf


def test_lambda_start_examples():
    spec = BasisSpec(2, 2)
    assert lambda_start_mle(ParamVector.zeros(spec, Graph.empty(3))) == 0.0
    g = Graph(3, ((0, 1), (1, 2)))
    mu = ParamVector.zeros(spec, g)
    mu.theta_v[:] = [[0.2, -0.1], [0.4, 0.3], [-0.5, 0.2]]
    for k, (i, j) in enumerate(g.edges):
        mu.theta_e[k] = np.outer(mu.theta_v[i], mu.theta_v[j])
    assert lambda_start_mle(mu) == pytest.approx(0.0, abs=1e-15)
    mu.theta_e[1, 0, 1] += 0.7
    assert lambda_start_mle(mu) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        lambda_start_mle(ParamVector.zeros(BasisSpec(1, 2), g))


def _sample_d2(rng, theta, n, res=256):
    x = (np.arange(res) + 0.5) / res
    phi = legendre_table(x, theta.spec.m1)[:, 1:]
    logd = ((phi[:, :theta.spec.m1] @ theta.theta_v[0])[:, None]
            + (phi[:, :theta.spec.m1] @ theta.theta_v[1])[None, :]
            + phi[:, :theta.spec.m2] @ theta.theta_e[0] @ phi[:, :theta.spec.m2].T)
    return sample_grid_density(rng, logd, 2, n, res)


def test_fit_at_lambda_start_is_vertex_only(rng):
    g = Graph.complete(3)
    X = rng.beta(2, 3, size=(300, 3))
    spec = BasisSpec(3, 2)
    mu = optim.empirical_moments(X, g, spec)
    ls = lambda_start_mle(ParamVector.from_flat(spec, g, mu))
    fit = optim.fit_trw_mle(X, g, spec, ls)
    assert np.all(fit.theta.theta_e == 0.0)
    tau_v = fit.trw.tau[:g.d * spec.m1]
    assert np.abs(tau_v - mu[:g.d * spec.m1]).max() <= 1e-4


def test_fit_recovers_d2_parameters(rng):
    g = Graph(2, ((0, 1),))
    spec = BasisSpec(2, 2)
    truth = ParamVector(spec, g, np.array([[0.5, -0.8], [-0.3, 0.6]]),
                        np.array([[[0.7, -0.2], [0.1, 0.4]]]))
    X = _sample_d2(rng, truth, 40000)
    fit = optim.fit_trw_mle(X, g, spec, 1e-6, obj_tol=1e-12, max_iter=3000,
                            bp_tol=1e-10, bp_max_iter=2000)
    assert np.abs(fit.theta.flat - truth.flat).max() < 0.1


def test_fit_kkt_and_fista(rng):
    g = chain(3)
    spec = BasisSpec(2, 2)
    X = _sample_d2(rng, ParamVector(spec, Graph(2, ((0, 1),)), np.zeros((2, 2)),
                                    np.array([[[1.0, 0.0], [0.0, 0.5]]])), 400)
    X = np.column_stack([X, np.clip(X[:, 1] + 0.05 * rng.standard_normal(400), 0, 1)])
    mu = optim.empirical_moments(X, g, spec)
    lam = 0.3 * lambda_start_mle(ParamVector.from_flat(spec, g, mu))
    kw = dict(obj_tol=1e-12, max_iter=5000, bp_tol=1e-10, bp_max_iter=2000)
    a = optim.fit_trw_mle(X, g, spec, lam, solver="ista", **kw)
    b = optim.fit_trw_mle(X, g, spec, lam, solver="fista", **kw)
    grad = a.trw.tau - mu
    assert kkt_residual(a.theta.flat, grad, lam, g.d * spec.m1, spec.m2 ** 2) < 1e-3
    assert abs(a.objective - b.objective) < 1e-7
    assert np.abs(a.theta.flat - b.theta.flat).max() < 1e-3


def test_warm_start_saves_iterations(rng):
    g = Graph.complete(3)
    spec = BasisSpec(2, 2)
    X = rng.beta(2, 2, size=(200, 1)) * np.ones((1, 3)) * 0.8 + 0.2 * rng.uniform(size=(200, 3))
    mu = optim.empirical_moments(X, g, spec)
    ls = lambda_start_mle(ParamVector.from_flat(spec, g, mu))
    first = optim.fit_trw_mle(X, g, spec, 0.5 * ls, obj_tol=1e-8)
    cold = optim.fit_trw_mle(X, g, spec, 0.4 * ls, obj_tol=1e-8)
    warm = optim.fit_trw_mle(X, g, spec, 0.4 * ls, obj_tol=1e-8, theta0=first.theta)
    assert warm.iterations < cold.iterations


def test_reg_path_wiring(rng):
    g = chain(3)
    spec = BasisSpec(2, 2)
    X = rng.uniform(size=(50, 3))
    calls = []

    def probe(lam, theta0):
        calls.append((lam, theta0))
        th = ParamVector.zeros(spec, g)
        th.theta_v[:] = lam
        return optim.FitResult(th, 0.0, 1, True, lam)

    path = optim.reg_path(X, g, spec, [2.0, 1.0], fitter=probe)
    assert calls[0][1] is None
    assert calls[1][1] is path.fits[0].theta
    with pytest.raises(ValueError):
        optim.reg_path(X, g, spec, [1.0, 2.0], fitter=probe)
    mu = optim.empirical_moments(X, g, spec)
    ls = lambda_start_mle(ParamVector.from_flat(spec, g, mu))
    one = optim.reg_path(X, g, spec, [ls])
    assert len(one.fits) == 1 and np.all(one.thetas[0].theta_e == 0)


def test_auto_lambdas():
    lams = optim.auto_lambdas(2.0, 30, 2)
    assert len(lams) == 30 and lams[0] == 2.0 and lams[-1] == pytest.approx(0.02)
    assert all(b < a for a, b in zip(lams, lams[1:]))


def test_trw_loss_gradient_is_tau_minus_mu(rng):
    g = Graph(2, ((0, 1),))
    spec = BasisSpec(2, 2)
    mu = rng.standard_normal(spec.n_stats(2, 1)) * 0.1
    loss = optim.TrwLoss(spec, g, mu, EdgeWeights.ones(g))
    theta = random_theta(rng, g, spec)
    val, grad = loss(theta.flat)
    res = trw.bp_run(theta, EdgeWeights.ones(g))
    assert val == pytest.approx(res.q_value - theta.flat @ mu)
    assert np.allclose(grad, res.tau - mu, atol=1e-6)


def test_oracle_failure_is_not_a_null_step():
    """A loss that fails away from the start point must surface as a step
    failure, not as convergence at the start."""
    x0 = np.array([0.0, 1.0, 1.0])

    def loss(x):
        if not np.array_equal(x, x0):
            raise BPNotConverged("forced", iterations=1)
        return 1.0, np.array([1.0, -1.0, 2.0])

    with pytest.raises(StepFailure):
        ista(ProxProblem(loss, 0.1, 1, 2), x0)
