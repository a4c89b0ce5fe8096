#!/usr/bin/env python

import numpy as np
import pytest

from measures import (CostMatrix, DiscreteMeasure, WeightConstraintSet, build_cost_matrix, entropy,
                      grid_coordinates, grid_measure_from_intensities, normalize_measure, uniform_measure)


def test_normalize_measure():
    np.testing.assert_allclose(normalize_measure([1, 3]), [0.25, 0.75])
    for bad in ([], [0, 0], [1, -1], [1, np.nan]):
        with pytest.raises(ValueError):
            normalize_measure(bad)


def test_discrete_measure_is_frozen_and_normalized():
    m = DiscreteMeasure([[0.0, 1.0, 2.0]], [2, 2, 4])
    assert m.dim == 1 and m.size == 3 and len(m) == 3
    np.testing.assert_allclose(m.weights, [0.25, 0.25, 0.5])
    with pytest.raises(ValueError):
        m.weights[0] = 1.0
    with pytest.raises(ValueError):
        DiscreteMeasure([[0.0, 1.0]], [1.0])


def test_pruned_drops_zero_atoms():
    m = DiscreteMeasure([[0.0, 1.0, 2.0]], [1, 0, 1]).pruned()
    np.testing.assert_array_equal(m.support, [[0.0, 2.0]])
    np.testing.assert_allclose(m.weights, [0.5, 0.5])


def test_uniform_measure():
    m = uniform_measure([[0, 1, 2, 3]])
    np.testing.assert_allclose(m.weights, 0.25)


def test_entropy():
    assert entropy([1.0, 0.0]) == 0.0
    assert entropy(np.full(4, 0.25)) == pytest.approx(np.log(4))


def test_squared_cost_matches_definition(rng):
    X = rng.normal(size=(3, 5))
    Y = rng.normal(size=(3, 4))
    M = build_cost_matrix(X, Y, 2.0)
    expected = ((X[:, :, None] - Y[:, None, :]) ** 2).sum(axis=0)
    np.testing.assert_allclose(M.entries, expected, atol=1e-12)
    assert M.metric == 'squared-euclidean' and M.power == 2.0


@pytest.mark.parametrize('p', [1.0, 1.5, 2.0, 3.0])
def test_self_cost_is_symmetric_with_zero_diagonal(rng, p):
    X = rng.normal(size=(2, 6))
    M = build_cost_matrix(X, X, p).entries
    np.testing.assert_array_equal(M, M.T)
    np.testing.assert_array_equal(np.diag(M), 0.0)
    assert np.all(M >= 0)


def test_cost_on_the_line():
    M = build_cost_matrix([0.0, 1.0, 2.0], [0.0, 2.0], 1.0)
    np.testing.assert_allclose(M.entries, [[0, 2], [1, 1], [2, 0]])


def test_cost_errors():
    with pytest.raises(ValueError):
        build_cost_matrix(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        build_cost_matrix(np.zeros((2, 0)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        build_cost_matrix(np.zeros((2, 3)), np.zeros((2, 3)), p=0.5)


def test_median_positive_is_lower_median():
    M = CostMatrix.precomputed([[0.0, 1.0], [4.0, 2.0], [3.0, 0.0]])
    assert M.median_positive() == 2.0
    with pytest.raises(ValueError):
        CostMatrix.precomputed([[0.0]]).median_positive()


def test_grid_coordinates():
    X = grid_coordinates(2, 3)
    np.testing.assert_allclose(X, [[0, 0, 0, 1, 1, 1], [0, 0.5, 1, 0, 0.5, 1]])
    np.testing.assert_allclose(grid_coordinates(1, 1), [[0.0], [0.0]])


def test_grid_measure_from_intensities():
    img = np.array([[0.0, 1.0], [3.0, 0.0]])
    m = grid_measure_from_intensities(img)
    assert m.size == 2
    np.testing.assert_allclose(m.weights, [0.25, 0.75])
    assert grid_measure_from_intensities(img, prune=False).size == 4
    with pytest.raises(ValueError):
        grid_measure_from_intensities(np.zeros((2, 2)))


def test_constraint_parse_and_contains():
    assert WeightConstraintSet.parse('simplex') == WeightConstraintSet.full_simplex()
    assert WeightConstraintSet.parse('uniform') == WeightConstraintSet.uniform()
    theta = WeightConstraintSet.parse('entropy:0.5')
    assert theta.kind == 'entropy' and theta.tau == 0.5
    with pytest.raises(ValueError):
        WeightConstraintSet.parse('box')

    assert WeightConstraintSet.uniform().contains(np.full(3, 1.0 / 3))
    assert not WeightConstraintSet.uniform().contains([0.5, 0.25, 0.25])
    assert theta.contains([0.5, 0.5])
    assert not theta.contains([0.99, 0.01])
    assert not WeightConstraintSet.full_simplex().contains([0.5, 0.6])


def test_constraint_initial_point():
    for theta in (WeightConstraintSet.full_simplex(), WeightConstraintSet.uniform(),
                  WeightConstraintSet.entropy_level_set(1.0)):
        a = theta.initial_point(4)
        np.testing.assert_array_equal(a, 0.25)
        assert theta.contains(a)
    with pytest.raises(ValueError):
        WeightConstraintSet.entropy_level_set(2.0).initial_point(4)
