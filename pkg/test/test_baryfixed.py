#!/usr/bin/env python

import itertools

import numpy as np
import pytest

from baryfixed import (BarycenterTrace, FixedBarycenterProblem, ProximalStepError, barycenter_fixed_support,
                       barycenter_objective, bregman_proximal_step, pooled_median_lambda, subgradient_alpha_bar)
from conftest import line_measure, random_simplex
from exactot import solve_exact_primal
from measures import DiscreteMeasure, WeightConstraintSet, build_cost_matrix, entropy
from sinkhorn import smoothed_transport

SIMPLEX = WeightConstraintSet.full_simplex()


def simplex_grid(n, step=0.02):
    """all points of the n-simplex with coordinates on a ``step`` lattice"""
    units = int(round(1.0 / step))
    for head in itertools.product(range(units + 1), repeat=n - 1):
        if sum(head) <= units:
            yield np.array(list(head) + [units - sum(head)], dtype=float) / units


def exact_objective(a, X, measures):
    return np.mean([solve_exact_primal(a, m.weights, build_cost_matrix(X, m.support, 2.0))[0] for m in measures])


def corner_points():
    return np.array([[0.0, 1.0, 0.0, 1.0, 0.5], [0.0, 0.0, 1.0, 1.0, 0.5]])


def test_proximal_step_examples():
    np.testing.assert_allclose(bregman_proximal_step([0.5, 0.5], [np.log(3.0), 0.0], SIMPLEX), [0.25, 0.75])
    a = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(bregman_proximal_step(a, np.zeros(3), SIMPLEX), a)
    np.testing.assert_allclose(bregman_proximal_step(a, np.full(3, 7.5), SIMPLEX), a)
    np.testing.assert_array_equal(bregman_proximal_step(a, [5.0, -1.0, 2.0], WeightConstraintSet.uniform()),
                                  np.full(3, 1.0 / 3))


def test_proximal_step_entropy_level():
    theta = WeightConstraintSet.entropy_level_set(1.0)
    a = np.full(4, 0.25)
    c = bregman_proximal_step(a, [-6.0, 0.0, 0.0, 0.0], theta)
    assert entropy(c) >= 1.0
    assert entropy(c) == pytest.approx(1.0, abs=1e-6)
    assert c[0] > c[1]
    mild = bregman_proximal_step(a, [-0.1, 0.0, 0.0, 0.0], theta)
    np.testing.assert_allclose(mild, bregman_proximal_step(a, [-0.1, 0.0, 0.0, 0.0], SIMPLEX))


def test_proximal_step_errors():
    with pytest.raises(ProximalStepError):
        bregman_proximal_step([0.5, 0.5], [np.inf, 0.0], SIMPLEX)
    with pytest.raises(ValueError):
        bregman_proximal_step([0.0, 1.0], [0.0, 0.0], SIMPLEX)


def test_trace_iterations_increase():
    trace = BarycenterTrace()
    trace.append(1, 2.0)
    trace.append(2, 1.5, step_norm=0.1, inner_iters=30)
    with pytest.raises(ValueError):
        trace.append(2, 1.0)
    assert trace.iterations == 2
    np.testing.assert_allclose(trace.objectives, [2.0, 1.5])
    assert list(trace.to_frame()['iter']) == [1, 2]


def test_collinear_barycenter_is_the_middle_atom():
    X = np.array([[0.0, 1.0, 2.0]])
    measures = [line_measure([0.0]), line_measure([2.0])]
    grid = list(simplex_grid(3))
    values = [exact_objective(a, X, measures) for a in grid]
    best = int(np.argmin(values))
    np.testing.assert_allclose(grid[best], [0.0, 1.0, 0.0])
    assert values[best] == pytest.approx(1.0, abs=1e-10)
    assert sorted(values)[1] >= 1.0 + 0.02 - 1e-10

    problem = FixedBarycenterProblem(X, measures, lam=100.0, max_outer=100)
    a_star, trace = barycenter_fixed_support(problem)
    assert a_star[1] >= 0.9
    assert trace.objectives.min() <= trace[0]['objective']


def test_smoothed_barycenter_is_close_to_exact():
    X = np.array([[0.0, 1.0, 2.0]])
    measures = [line_measure([0.2]), line_measure([1.5])]
    grid_min = min(exact_objective(a, X, measures) for a in simplex_grid(3))
    lam = 2000.0 / 3.24
    problem = FixedBarycenterProblem(X, measures, lam=lam, log_domain=True, max_outer=100)
    a_star, trace = barycenter_fixed_support(problem)
    best = trace.objectives.min()
    assert best >= grid_min - 1e-5
    assert best <= grid_min + 5.0 * np.log(3) / lam


def test_self_barycenter():
    X = corner_points()
    b = np.array([0.1, 0.3, 0.2, 0.15, 0.25])
    nu = DiscreteMeasure(X, b)
    problem = FixedBarycenterProblem(X, [nu], lam=None, lambda_scale=200.0)
    assert problem.lam == pytest.approx(200.0)
    a_star, trace = barycenter_fixed_support(problem)
    assert np.abs(a_star - b).sum() <= 0.05


def test_uniform_constraint_returns_uniform_weights(rng):
    X = rng.uniform(size=(2, 6))
    measures = [DiscreteMeasure(rng.uniform(size=(2, 4)), random_simplex(rng, 4)) for _ in range(2)]
    problem = FixedBarycenterProblem(X, measures, theta='uniform')
    a_star, trace = barycenter_fixed_support(problem)
    np.testing.assert_array_equal(a_star, np.full(6, 1.0 / 6))
    assert len(trace) == 1


def test_alpha_bar_is_zero_sum_and_small_for_self_transport():
    X = corner_points()
    a = np.array([0.1, 0.3, 0.2, 0.15, 0.25])
    alpha_bar = subgradient_alpha_bar(a, X, [DiscreteMeasure(X, a)], lam=100.0)
    assert abs(alpha_bar.sum()) <= 1e-10
    assert np.abs(alpha_bar).max() <= 0.05


def test_alpha_bar_of_identical_measures(rng):
    X = rng.uniform(size=(2, 4))
    nu = DiscreteMeasure(rng.uniform(size=(2, 3)), random_simplex(rng, 3))
    a = random_simplex(rng, 4)
    lam = 10.0
    single = smoothed_transport(a, nu.weights, build_cost_matrix(X, nu.support), lam).alpha
    np.testing.assert_allclose(subgradient_alpha_bar(a, X, [nu, nu], lam), single, atol=1e-14)


def test_alpha_bar_matches_finite_differences(rng):
    eps = 1e-5
    X = rng.uniform(size=(2, 4))
    measures = [DiscreteMeasure(rng.uniform(size=(2, m)), random_simplex(rng, m)) for m in (3, 5)]
    a = random_simplex(rng, 4)
    lam = 20.0
    alpha_bar = subgradient_alpha_bar(a, X, measures, lam, tol=1e-12, max_iter=100000)
    for _ in range(5):
        d = rng.normal(size=4)
        d -= d.mean()
        d /= np.abs(d).max()
        plus = barycenter_objective(a + eps * d, X, measures, lam, regularized=True, tol=1e-12, max_iter=100000)
        minus = barycenter_objective(a - eps * d, X, measures, lam, regularized=True, tol=1e-12, max_iter=100000)
        assert (plus - minus) / (2 * eps) == pytest.approx(alpha_bar @ d, abs=1e-4)


def test_smoothed_objective_is_convex_along_a_segment(rng):
    X = rng.uniform(size=(2, 4))
    measures = [DiscreteMeasure(rng.uniform(size=(2, 3)), random_simplex(rng, 3)) for _ in range(2)]
    a1, a2 = random_simplex(rng, 4), random_simplex(rng, 4)
    lam = 20.0
    values = np.array([barycenter_objective((1 - t) * a1 + t * a2, X, measures, lam, regularized=True, tol=1e-12,
                                            max_iter=100000) for t in np.linspace(0.0, 1.0, 11)])
    assert np.all(values[:-2] - 2 * values[1:-1] + values[2:] >= -1e-6)


def test_iterates_stay_in_the_entropy_level_set(rng):
    X = rng.uniform(size=(2, 5))
    measures = [DiscreteMeasure(rng.uniform(size=(2, 3)), random_simplex(rng, 3)) for _ in range(3)]
    theta = WeightConstraintSet.entropy_level_set(0.8 * np.log(5))
    problem = FixedBarycenterProblem(X, measures, theta=theta, max_outer=30)
    a_star, trace = barycenter_fixed_support(problem)
    assert theta.contains(a_star)
    for a in trace.weights:
        assert theta.contains(a)
        assert np.all(a > 0)


def test_best_iterate_is_returned_and_non_increasing(rng):
    X = rng.uniform(size=(2, 5))
    measures = [DiscreteMeasure(rng.uniform(size=(2, 4)), random_simplex(rng, 4)) for _ in range(2)]
    bests = []
    for max_outer in (5, 10, 20):
        problem = FixedBarycenterProblem(X, measures, max_outer=max_outer, tol=0.0)
        a_star, trace = barycenter_fixed_support(problem)
        assert np.all(np.diff([r['iter'] for r in trace]) > 0)
        assert trace.objectives.min() <= trace[0]['objective']
        best = int(np.argmin(trace.objectives))
        np.testing.assert_array_equal(a_star, trace.weights[best])
        bests.append(trace.objectives.min())
    assert bests[1] <= bests[0] and bests[2] <= bests[1]


def test_pooled_median_lambda():
    X = np.array([[0.0, 1.0]])
    costs = [build_cost_matrix(X, np.array([[0.0]])), build_cost_matrix(X, np.array([[2.0]]))]
    # positive entries 1, 4, 1: lower median 1
    assert pooled_median_lambda(costs) == pytest.approx(60.0)


def test_problem_errors(rng):
    X = rng.uniform(size=(2, 3))
    nu = DiscreteMeasure(rng.uniform(size=(2, 3)), random_simplex(rng, 3))
    with pytest.raises(ValueError):
        FixedBarycenterProblem(X, [])
    with pytest.raises(ValueError):
        FixedBarycenterProblem(X, [line_measure([0.0, 1.0])])
    with pytest.raises(ValueError):
        FixedBarycenterProblem(X, [nu], t0=0.0)
    with pytest.raises(ValueError):
        barycenter_fixed_support(FixedBarycenterProblem(X, [nu]), initial=[1.0, 0.0, 0.0])
