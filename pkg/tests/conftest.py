import numpy as np
import pytest

from pairmrf.basis import BasisSpec
from pairmrf.graphmodel import Graph, ParamVector


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_theta(rng, graph, spec, scale=1.0):
    n = spec.n_stats(graph.d, graph.n_edges)
    return ParamVector.from_flat(spec, graph, scale * rng.standard_normal(n))


def chain(d):
    return Graph(d, tuple((i, i + 1) for i in range(d - 1)))


def sample_grid_density(rng, logdens, d, n, res=256):
    """Draw ``n`` points from a density on [0,1]^d (d <= 2) given on a
    ``res``-point midpoint grid, jittered uniformly inside cells."""
    p = np.exp(logdens - logdens.max()).ravel()
    p /= p.sum()
    cells = rng.choice(p.size, size=n, p=p)
    idx = np.stack(np.unravel_index(cells, (res,) * d), axis=1)
    return (idx + rng.uniform(size=idx.shape)) / res


SPEC22 = BasisSpec(2, 2)
