import math

import numpy as np
import pytest

from pairmrf import trw
from pairmrf.basis import BasisSpec
from pairmrf.evaluate import (best_tp_tn, edge_rates, gaussian_nll, kl_grid, roc_curve,
                              tree_exact_nll, tree_logz, trw_nll_upper, write_metrics)
from pairmrf.exceptions import EvaluationError, GraphStructureError
from pairmrf.graphmodel import Graph, ParamVector, log_density_unnorm
from pairmrf.gridfn import GriddedFn1D, GriddedFn2D, Grid1D, from_function
from pairmrf.optim import FitResult, PathResult
from pairmrf.spantree import EdgeWeights, edge_weights_init

from conftest import SPEC22, chain, random_theta

GRID = Grid1D(64)


def brute_nll(theta, X, grid=GRID):
    return trw.brute_force_logz(theta, grid) - log_density_unnorm(theta, X).mean()


def test_zero_theta_nll(rng):
    g = chain(3)
    X = rng.uniform(size=(10, 3))
    zero = ParamVector.zeros(SPEC22, g)
    assert tree_exact_nll(zero, g, X, GRID) == pytest.approx(0.0, abs=1e-12)
    assert trw_nll_upper(zero, EdgeWeights.ones(g), X, GRID) == pytest.approx(0.0, abs=1e-12)


def test_tree_nll_edge_model(rng):
    g = chain(2)
    theta = random_theta(rng, g, SPEC22)
    X = rng.uniform(size=(25, 2))
    assert abs(tree_exact_nll(theta, g, X, GRID) - brute_nll(theta, X)) < 1e-6


def test_tree_nll_star(rng):
    g = Graph(4, ((0, 1), (0, 2), (0, 3)))
    theta = random_theta(rng, g, SPEC22)
    X = rng.uniform(size=(25, 4))
    assert abs(tree_exact_nll(theta, g, X, GRID) - brute_nll(theta, X)) < 1e-5


def test_tree_logz_forest_and_subgraph(rng):
    # parameters on a sub-forest of the declared tree, with an isolated node
    g = Graph(4, ((0, 1), (1, 2)))
    theta = random_theta(rng, g, SPEC22)
    tree = Graph(4, ((0, 1), (1, 2), (2, 3)))
    assert tree_logz(theta, tree, GRID) == pytest.approx(trw.brute_force_logz(theta, GRID), abs=1e-10)


def test_tree_logz_rejects_misuse(rng):
    tri = Graph.complete(3)
    theta = random_theta(rng, tri, SPEC22)
    with pytest.raises(GraphStructureError):
        tree_logz(theta, tri, GRID)
    with pytest.raises(GraphStructureError):
        tree_logz(theta, chain(3), GRID)


def test_trw_upper_tree_and_triangle(rng):
    g = chain(3)
    theta = random_theta(rng, g, SPEC22)
    X = rng.uniform(size=(20, 3))
    upper = trw_nll_upper(theta, EdgeWeights.ones(g), X, GRID, tol=1e-10)
    assert abs(upper - tree_exact_nll(theta, g, X, GRID)) < 1e-5
    assert upper >= tree_exact_nll(theta, g, X, GRID) - 1e-8
    tri = Graph.complete(3)
    theta = random_theta(rng, tri, SPEC22)
    alpha = edge_weights_init(tri, rng=rng)
    assert trw_nll_upper(theta, alpha, X, GRID, tol=1e-10) >= brute_nll(theta, X)


def test_gaussian_nll_examples(rng):
    d = 3
    assert gaussian_nll(np.eye(d), np.zeros((1, d))) == pytest.approx(0.5 * d * math.log(2 * math.pi))
    X = rng.standard_normal((20000, d))
    expected = 0.5 * d * (math.log(2 * math.pi) + 1)
    assert abs(gaussian_nll(np.eye(d), X) / expected - 1) < 0.02
    A = rng.standard_normal((d, d))
    om = A @ A.T + d * np.eye(d)
    c = 1.7
    quad = np.einsum("ni,ij,nj->n", X, om, X).mean()
    diff = gaussian_nll(c * om, X) - gaussian_nll(om, X)
    assert diff == pytest.approx(-0.5 * d * math.log(c) + 0.5 * (c - 1) * quad, rel=1e-10)
    shifted = X + 2.0
    assert gaussian_nll(om, shifted, mean=np.full(d, 2.0)) == pytest.approx(gaussian_nll(om, X))


def test_gaussian_nll_rejects_bad_precision():
    with pytest.raises(EvaluationError):
        gaussian_nll(np.array([[1.0, 2.0], [2.0, 1.0]]), np.zeros((1, 2)))
    with pytest.raises(EvaluationError):
        gaussian_nll(np.array([[1.0, 0.1], [0.0, 1.0]]), np.zeros((1, 2)))


def test_gaussian_truth_beats_diagonal(rng):
    om = np.array([[2.0, -0.9, 0.0], [-0.9, 2.0, -0.9], [0.0, -0.9, 2.0]])
    X = rng.multivariate_normal(np.zeros(3), np.linalg.inv(om), size=5000)
    diag = np.diag(1.0 / X.var(0))
    assert gaussian_nll(om, X) <= gaussian_nll(diag, X)


def test_kl_examples(rng):
    grid = Grid1D(128)
    uniform = GriddedFn1D(grid, np.ones(128))
    expo = from_function(lambda x: np.exp(x) / (math.e - 1), grid)
    assert kl_grid(uniform, uniform) == 0.0
    assert abs(kl_grid(uniform, expo) - (math.log(math.e - 1) - 0.5)) < 1e-4
    assert abs(kl_grid(expo, uniform) - (1 / (math.e - 1) - math.log(math.e - 1))) < 1e-4
    small = Grid1D(16)
    for _ in range(100):
        p, q = rng.uniform(0.01, 1, size=(2, 16, 16))
        p *= 256 / p.sum()
        q *= 256 / q.sum()
        assert kl_grid(GriddedFn2D(small, p), GriddedFn2D(small, q)) >= -1e-10
    with pytest.raises(ValueError):
        kl_grid(uniform, GriddedFn1D(Grid1D(4), np.ones(4)))


def test_edge_rate_examples():
    truth = chain(4)
    assert edge_rates(truth.edges, truth) == (1.0, 1.0)
    assert edge_rates([], truth) == (0.0, 1.0)
    comp = set(Graph.complete(4).edges) - set(truth.edges)
    assert edge_rates(comp, truth) == (0.0, 0.0)
    assert edge_rates([], Graph.empty(3)) == (1.0, 1.0)
    assert edge_rates(Graph.complete(3).edges, Graph.complete(3)) == (1.0, 1.0)


def test_roc_curve_from_path_and_matrices(rng):
    truth = chain(3)
    full = Graph.complete(3)
    spec = BasisSpec(1, 1)
    t1 = ParamVector.zeros(spec, full)
    t2 = ParamVector(spec, full, np.zeros((3, 1)), np.array([[[1.0]], [[0.0]], [[2.0]]]))
    path = PathResult([1.0, 0.5], [FitResult(t, 0.0, 0, True, lam) for t, lam in ((t1, 1.0), (t2, 0.5))])
    pts = roc_curve(path, truth)
    assert [(p.tp_rate, p.tn_rate, p.n_edges_selected) for p in pts] == [(0.0, 1.0, 0), (1.0, 1.0, 2)]
    om = np.eye(3)
    om[0, 2] = om[2, 0] = 0.3
    pts = roc_curve([(0.1, om)], truth)
    assert (pts[0].tp_rate, pts[0].tn_rate) == (0.0, 0.0)
    assert best_tp_tn(roc_curve(path, truth)) == 2.0


def test_roc_permutation_invariant(rng):
    d = 5
    truth = Graph(d, ((0, 1), (1, 2), (3, 4)))
    sel = [(0, 1), (2, 4), (0, 3)]
    perm = rng.permutation(d)
    relabel = lambda edges: [tuple(sorted((int(perm[i]), int(perm[j])))) for i, j in edges]
    assert edge_rates(sel, truth) == edge_rates(relabel(sel), Graph(d, tuple(relabel(truth.edges))))


def test_write_metrics(tmp_path):
    path = tmp_path / "m.csv"
    write_metrics(path, [{"lam": 0.5, "nll": 1.25, "tp": 1.0, "tn": 0.5, "edges": 3},
                         {"lam": 0.25, "nll": None, "tp": 1.0, "tn": 1.0, "edges": 4}])
    lines = path.read_text().splitlines()
    assert lines[0] == "lam,nll,tp,tn,edges"
    assert lines[1].split(",")[0] == "5.00000000000000000e-01"
    assert lines[2].split(",")[1] == ""
