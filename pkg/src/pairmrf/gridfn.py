"""Gridded univariate and bivariate functions on [0, 1] with midpoint-rule
quadrature."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateFunctionError

LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class Grid1D:
    n_points: int = 128

    def __post_init__(self):
        if int(self.n_points) < 1:
            raise ValueError("grid needs at least one point")

    @property
    def nodes(self):
        return (np.arange(self.n_points) + 0.5) / self.n_points

    @property
    def weight(self):
        return 1.0 / self.n_points


@dataclass
class GriddedFn1D:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_points,):
            raise ValueError("values do not match grid size")


@dataclass
class GriddedFn2D:
    """Values indexed ``[a, b]`` with ``a`` on the first axis's grid."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = self.grid.n_points
        if self.values.shape != (n, n):
            raise ValueError("values do not match grid size")


def _cell(f):
    return f.grid.weight ** f.values.ndim


def integrate(f):
    return float(f.values.sum() * _cell(f))


def normalize(f):
    mass = integrate(f)
    if not np.isfinite(mass) or mass <= 0 or np.any(f.values < 0):
        raise DegenerateFunctionError(f"cannot normalize function with mass {mass}")
    return type(f)(f.grid, f.values / mass)


def marginalize(q, axis):
    """Integrate out ``axis`` (0 or 1) of a bivariate function; the result
    lives on the remaining axis."""
    if axis not in (0, 1):
        raise ValueError("axis must be 0 or 1")
    return GriddedFn1D(q.grid, q.values.sum(axis=axis) * q.grid.weight)


def _xlogx(v):
    return v * np.log(np.maximum(v, LOG_FLOOR))


def entropy(q):
    """Differential entropy ``-int q log q`` of a gridded density."""
    return float(-_xlogx(q.values).sum() * q.grid.weight)


def mutual_info(q):
    """``int q log(q / (q_a q_b))`` with marginals taken from ``q`` itself."""
    qa = marginalize(q, 1).values
    qb = marginalize(q, 0).values
    v = q.values
    logratio = (np.log(np.maximum(v, LOG_FLOOR))
                - np.log(np.maximum(qa, LOG_FLOOR))[:, None]
                - np.log(np.maximum(qb, LOG_FLOOR))[None, :])
    return float((v * logratio).sum() * q.grid.weight ** 2)


def from_function(fn, grid, ndim=1):
    """Sample ``fn`` at the grid midpoints."""
    x = grid.nodes
    if ndim == 1:
        return GriddedFn1D(grid, fn(x))
    xa, xb = np.meshgrid(x, x, indexing="ij")
    return GriddedFn2D(grid, fn(xa, xb))


def to_csv(f, path):
    np.savetxt(path, np.atleast_2d(f.values), delimiter=",", fmt="%.17e")
