"""Orthonormal shifted Legendre basis on [0, 1].

The k-th basis function is ``phi_k(x) = sqrt(2k+1) * P_k(2x - 1)`` where
``P_k`` is the classical Legendre polynomial on [-1, 1]; these satisfy
``int_0^1 phi_k phi_l dx = 1{k == l}`` and ``|phi_k| <= sqrt(2k+1)``.
``phi_0`` is the constant 1; model statistics start at ``k = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError

# below this value of x(1-x) the Bonnet/ODE quotients lose precision and the
# derivative recurrences are used instead
_ENDPOINT_GAP = 1e-2


@dataclass(frozen=True)
class BasisSpec:
    """Truncation counts: ``m1`` univariate terms, ``m2`` terms per axis of
    each bivariate tensor-product block."""

    m1: int
    m2: int

    def __post_init__(self):
        if int(self.m1) < 1 or int(self.m2) < 1:
            raise ValueError(f"m1 and m2 must be >= 1, got {self.m1}, {self.m2}")

    def n_stats(self, d, n_edges):
        return d * self.m1 + n_edges * self.m2 ** 2


def _check_unit(x):
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise DomainError("basis evaluation requires points in [0, 1]")
    return x


def legendre_table(x, kmax):
    """Values of ``phi_0 .. phi_kmax`` at ``x``; shape ``x.shape + (kmax+1,)``."""
    x = _check_unit(x)
    t = 2.0 * x - 1.0
    P = np.empty(x.shape + (kmax + 1,))
    P[..., 0] = 1.0
    if kmax >= 1:
        P[..., 1] = t
    for k in range(1, kmax):
        P[..., k + 1] = ((2 * k + 1) * t * P[..., k] - k * P[..., k - 1]) / (k + 1)
    return P * np.sqrt(2.0 * np.arange(kmax + 1) + 1.0)


def _recurrence_derivs(t, kmax):
    # P'_{k+1} = P'_{k-1} + (2k+1) P_k, and the same relation one order up
    P = np.empty(t.shape + (kmax + 1,))
    D1 = np.zeros_like(P)
    D2 = np.zeros_like(P)
    P[..., 0] = 1.0
    if kmax >= 1:
        P[..., 1] = t
        D1[..., 1] = 1.0
    for k in range(1, kmax):
        P[..., k + 1] = ((2 * k + 1) * t * P[..., k] - k * P[..., k - 1]) / (k + 1)
        D1[..., k + 1] = D1[..., k - 1] + (2 * k + 1) * P[..., k]
        D2[..., k + 1] = D2[..., k - 1] + (2 * k + 1) * D1[..., k]
    return P, D1, D2


def legendre_deriv_table(x, kmax):
    """Values, first and second x-derivatives of ``phi_0 .. phi_kmax``.

    Interior points use the Bonnet relation
    ``x(1-x) phi_k' = (k/2) (sqrt((2k+1)/(2k-1)) phi_{k-1} - (2x-1) phi_k)``
    and the Legendre equation
    ``x(1-x) phi_k'' - (2x-1) phi_k' + k(k+1) phi_k = 0``; points close to
    the boundary fall back to the derivative recurrences.
    Returns three arrays of shape ``x.shape + (kmax+1,)``.
    """
    x = _check_unit(x)
    t = 2.0 * x - 1.0
    scale = np.sqrt(2.0 * np.arange(kmax + 1) + 1.0)
    P, D1r, D2r = _recurrence_derivs(t, kmax)
    phi = P * scale
    # chain rule: d/dx = 2 d/dt
    d1 = D1r * scale * 2.0
    d2 = D2r * scale * 4.0

    w = x * (1.0 - x)
    inner = w > _ENDPOINT_GAP
    if kmax >= 1 and np.any(inner):
        wi = w[inner][..., None]
        ti = t[inner][..., None]
        ph = phi[inner]
        k = np.arange(1, kmax + 1)
        ratio = np.sqrt((2.0 * k + 1.0) / (2.0 * k - 1.0))
        b1 = np.zeros_like(ph)
        b1[..., 1:] = (k / 2.0) * (ratio * ph[..., :-1] - ti * ph[..., 1:]) / wi
        kk = np.arange(kmax + 1)
        b2 = (ti * b1 - kk * (kk + 1) * ph) / wi
        d1[inner] = b1
        d2[inner] = b2
    return phi, d1, d2


def legendre_eval(k, x):
    """Orthonormal shifted Legendre polynomial ``phi_k(x)`` on [0, 1]."""
    x = np.asarray(x, dtype=float)
    out = legendre_table(x, int(k))[..., int(k)]
    return float(out) if out.ndim == 0 else out


def legendre_derivs(k, x):
    """First and second derivatives ``(phi_k'(x), phi_k''(x))``."""
    x = np.asarray(x, dtype=float)
    _, d1, d2 = legendre_deriv_table(x, int(k))
    d1, d2 = d1[..., int(k)], d2[..., int(k)]
    if d1.ndim == 0:
        return float(d1), float(d2)
    return d1, d2


def stat_matrix(X, graph, spec):
    """Sufficient statistics for every row of ``X`` (shape ``(n, d)``).

    Column layout: vertex blocks (node ascending, k = 1..m1), then one
    ``m2 x m2`` block per edge ``(i, j)``, ``i < j``, in graph order,
    flattened row-major with the row index on ``phi_k(x_i)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    if d != graph.d:
        raise DomainError(f"data has {d} columns, graph has {graph.d} nodes")
    kmax = max(spec.m1, spec.m2)
    tab = legendre_table(X, kmax)  # (n, d, kmax+1)
    blocks = [tab[:, :, 1:spec.m1 + 1].reshape(n, d * spec.m1)]
    if graph.edges:
        ii = np.array([e[0] for e in graph.edges])
        jj = np.array([e[1] for e in graph.edges])
        left = tab[:, ii, 1:spec.m2 + 1]
        right = tab[:, jj, 1:spec.m2 + 1]
        outer = left[:, :, :, None] * right[:, :, None, :]
        blocks.append(outer.reshape(n, -1))
    return np.concatenate(blocks, axis=1)


def stat_vector(x, graph, spec):
    """Sufficient statistic vector ``phi(x)`` for a single point."""
    x = np.asarray(x, dtype=float).ravel()
    return stat_matrix(x[None, :], graph, spec)[0]
