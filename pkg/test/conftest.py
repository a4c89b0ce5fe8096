#!/usr/bin/env python
"""shared fixtures; puts the repository root on ``sys.path`` so the flat
top-level modules import as in production.
"""

import sys
from os.path import abspath, dirname, join

import numpy as np
import pytest

sys.path.insert(0, join(dirname(abspath(__file__)), '..'))

from measures import DiscreteMeasure  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20131)


@pytest.fixture
def two_by_two():
    """a=(0.3,0.7), b=(0.6,0.4) with optimum 1.6 at [[0,0.3],[0.6,0.1]]"""
    return (np.array([0.3, 0.7]), np.array([0.6, 0.4]), np.array([[0.0, 2.0], [1.0, 4.0]]))


def random_simplex(rng, n):
    w = rng.uniform(0.05, 1.0, size=n)
    return w / w.sum()


def random_instance(rng, n, m, d=2):
    """two random measures in the unit square and their squared distances"""
    from measures import build_cost_matrix
    X = rng.uniform(size=(d, n))
    Y = rng.uniform(size=(d, m))
    return random_simplex(rng, n), random_simplex(rng, m), build_cost_matrix(X, Y, 2.0).entries


def line_measure(points, weights=None):
    points = np.asarray(points, dtype=float)
    weights = np.ones(points.size) if weights is None else weights
    return DiscreteMeasure(points[None, :], weights)
