"""Shared forest builders used across the test modules."""

import numpy as np
import pytest

from shapfor.forest import Forest, Internal, Leaf, Tree


def two_leaf_tree(dim: int = 0, cut: float = 0.5, left: float = 0.0,
                  right: float = 1.0) -> Tree:
    return Tree(Internal(dim, cut, Leaf(left), Leaf(right)))


def two_leaf_forest(p: int = 2) -> Forest:
    """f(x) = 1{x_0 >= 0.5} on [0,1]^p."""
    return Forest((two_leaf_tree(),), p)


def interaction_forest(p: int = 2) -> Forest:
    """f(x) = 1{x_0 >= 0.5, x_1 >= 0.5}; variance 3/16 with V_0 = V_1 = 1/16."""
    tree = Tree(Internal(0, 0.5, Leaf(0.0),
                         Internal(1, 0.5, Leaf(0.0), Leaf(1.0))))
    return Forest((tree,), p)


def constant_forest(c: float, p: int = 2) -> Forest:
    return Forest((Tree(Leaf(c)),), p)


def figure_tree(mus=(1.0, 2.0, 3.0, 4.0)) -> Tree:
    """Two-dim tree: root splits x_1 at 0.7, children split x_0 at 0.2 / 0.4."""
    m1, m2, m3, m4 = mus
    return Tree(Internal(1, 0.7,
                         Internal(0, 0.2, Leaf(m1), Leaf(m2)),
                         Internal(0, 0.4, Leaf(m3), Leaf(m4))))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
