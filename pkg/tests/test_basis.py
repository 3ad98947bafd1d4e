import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairmrf.basis import (BasisSpec, legendre_deriv_table, legendre_derivs, legendre_eval,
                           legendre_table, stat_matrix, stat_vector)
from pairmrf.exceptions import DomainError
from pairmrf.graphmodel import Graph


def test_known_values():
    assert legendre_eval(0, 0.37) == pytest.approx(1.0)
    assert legendre_eval(1, 1.0) == pytest.approx(math.sqrt(3))
    assert legendre_eval(2, 0.5) == pytest.approx(-math.sqrt(5) / 2)


def test_known_derivatives():
    assert legendre_derivs(0, 0.3) == (0.0, 0.0)
    d1, d2 = legendre_derivs(1, 0.2)
    assert d1 == pytest.approx(2 * math.sqrt(3)) and d2 == pytest.approx(0.0, abs=1e-12)
    d1, d2 = legendre_derivs(2, 0.5)
    assert d1 == pytest.approx(0.0, abs=1e-12) and d2 == pytest.approx(12 * math.sqrt(5))


def test_orthonormal_by_quadrature():
    # Gauss-Legendre with 32 nodes is exact up to degree 63
    t, w = np.polynomial.legendre.leggauss(32)
    x, w = (t + 1) / 2, w / 2
    phi = legendre_table(x, 10)
    gram = phi.T @ (phi * w[:, None])
    assert np.abs(gram - np.eye(11)).max() < 1e-12


def test_bonnet_identity_random_points(rng):
    x = rng.uniform(0.01, 0.99, size=100)
    phi, d1, _ = legendre_deriv_table(x, 8)
    for k in range(1, 9):
        lhs = x * (1 - x) * d1[:, k]
        rhs = (k / 2) * (math.sqrt((2 * k + 1) / (2 * k - 1)) * phi[:, k - 1]
                         - (2 * x - 1) * phi[:, k])
        assert np.abs(lhs - rhs).max() < 1e-9


def test_legendre_ode(rng):
    x = rng.uniform(0.05, 0.95, size=50)
    phi, d1, d2 = legendre_deriv_table(x, 8)
    k = np.arange(9)
    res = (x * (1 - x))[:, None] * d2 - (2 * x - 1)[:, None] * d1 + k * (k + 1) * phi
    assert np.abs(res).max() < 1e-8


@pytest.mark.parametrize("x0", [0.0, 1e-4, 0.004, 0.3, 0.5, 0.9, 0.999, 1.0])
def test_derivatives_match_finite_differences(x0):
    h = 1e-5
    xs = np.clip(np.array([x0 - h, x0, x0 + h]), 0, 1)
    if xs[0] == xs[1]:
        xs = np.array([x0, x0 + h, x0 + 2 * h])
    elif xs[2] == xs[1]:
        xs = np.array([x0 - 2 * h, x0 - h, x0])
    phi = legendre_table(xs, 8)
    _, d1, d2 = legendre_deriv_table(xs[1], 8)
    fd1 = (phi[2] - phi[0]) / (2 * h)
    fd2 = (phi[2] - 2 * phi[1] + phi[0]) / h ** 2
    scale = np.maximum(np.abs(d1), 1.0)
    assert np.all(np.abs(fd1 - d1) / scale < 1e-5)
    scale2 = np.maximum(np.abs(d2), 1.0)
    assert np.all(np.abs(fd2 - d2) / scale2 < 1e-3)


def test_boundary_formula_is_continuous():
    eps = np.array([0.005, 0.00501, 0.995, 0.99499])
    _, d1, d2 = legendre_deriv_table(eps, 8)
    assert np.allclose(d1[0], d1[1], rtol=1e-3) and np.allclose(d1[2], d1[3], rtol=1e-3)
    assert np.allclose(d2[0], d2[1], rtol=1e-2) and np.allclose(d2[2], d2[3], rtol=1e-2)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.integers(0, 12))
def test_bound(x, k):
    assert abs(legendre_eval(k, x)) <= math.sqrt(2 * k + 1) + 1e-12


def test_domain_errors():
    with pytest.raises(DomainError):
        legendre_eval(1, 1.2)
    with pytest.raises(DomainError):
        legendre_table(np.array([-0.1, 0.5]), 3)


def test_stat_vector_layout():
    g0 = Graph.empty(3)
    x = np.array([0.1, 0.6, 0.9])
    assert np.allclose(stat_vector(x, g0, BasisSpec(1, 1)), [legendre_eval(1, v) for v in x])
    g = Graph(2, ((0, 1),))
    assert np.allclose(stat_vector(np.array([0.5, 0.5]), g, BasisSpec(1, 1)), 0.0)
    s3 = math.sqrt(3)
    assert np.allclose(stat_vector(np.array([1.0, 0.0]), g, BasisSpec(1, 1)), [s3, -s3, -3.0])


def test_stat_matrix_rows_match_vectors(rng):
    g = Graph(3, ((0, 1), (1, 2)))
    spec = BasisSpec(3, 2)
    X = rng.uniform(size=(5, 3))
    S = stat_matrix(X, g, spec)
    assert S.shape == (5, spec.n_stats(3, 2))
    for r in range(5):
        assert np.allclose(S[r], stat_vector(X[r], g, spec))
    # edge entry (k, l) is phi_k(x_i) phi_l(x_j), row-major
    e = S[0, 3 * 3:3 * 3 + 4].reshape(2, 2)
    assert np.allclose(e, np.outer(legendre_table(X[0, 0], 2)[1:], legendre_table(X[0, 1], 2)[1:]))
