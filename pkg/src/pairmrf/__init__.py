"""Sparse nonparametric pairwise Markov random fields on the unit cube:
tree-reweighted variational maximum likelihood and regularized score
matching over Legendre exponential-series families."""

__version__ = "0.1.0"
