#!/usr/bin/env python

import time

import numpy as np
import pytest

from conftest import random_simplex
from exactot import (InstanceTooLargeError, TransportPlan, brute_force_cost, check_marginals, solve_exact_dual,
                     solve_exact_primal)
from measures import build_cost_matrix


def test_two_by_two_primal(two_by_two):
    a, b, M = two_by_two
    cost, plan = solve_exact_primal(a, b, M)
    assert cost == pytest.approx(1.6, abs=1e-12)
    np.testing.assert_allclose(plan.matrix, [[0.0, 0.3], [0.6, 0.1]], atol=1e-12)
    assert plan.is_feasible()


def test_two_by_two_dual(two_by_two):
    a, b, M = two_by_two
    dual = solve_exact_dual(a, b, M)
    assert dual.objective(a, b) == pytest.approx(1.6, abs=1e-8)
    assert dual.is_feasible(M)
    assert abs(dual.alpha.sum()) <= 1e-10


def test_two_by_two_brute_force(two_by_two):
    assert brute_force_cost(*two_by_two) == pytest.approx(1.6, abs=1e-6)


def test_self_transport_is_free(rng):
    X = rng.uniform(size=(2, 5))
    a = random_simplex(rng, 5)
    M = build_cost_matrix(X, X, 2.0)
    cost, plan = solve_exact_primal(a, a, M)
    assert cost == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(plan.matrix, np.diag(a), atol=1e-12)
    assert solve_exact_dual(a, a, M).objective(a, a) == pytest.approx(0.0, abs=1e-8)


def test_single_source_is_forced(rng):
    b = random_simplex(rng, 4)
    M = rng.uniform(size=(1, 4))
    cost, plan = solve_exact_primal([1.0], b, M)
    assert cost == pytest.approx(float(b @ M[0]), abs=1e-12)
    np.testing.assert_allclose(plan.matrix[0], b, atol=1e-12)
    assert brute_force_cost([1.0], b, M) == pytest.approx(float(b @ M[0]), abs=1e-12)


def test_one_by_one_dual():
    dual = solve_exact_dual([1.0], [1.0], [[3.5]])
    np.testing.assert_allclose(dual.alpha, [0.0], atol=1e-12)
    np.testing.assert_allclose(dual.beta, [3.5], atol=1e-12)


def test_brute_force_identity_coupling():
    assert brute_force_cost([0.5, 0.5], [0.5, 0.5], [[0.0, 1.0], [1.0, 0.0]]) == pytest.approx(0.0, abs=1e-12)


def test_zero_weights_are_allowed(rng):
    a = np.array([0.0, 0.4, 0.6])
    b = np.array([0.5, 0.0, 0.5])
    M = rng.uniform(size=(3, 3))
    cost, plan = solve_exact_primal(a, b, M)
    dual = solve_exact_dual(a, b, M)
    assert plan.is_feasible()
    assert dual.is_feasible(M)
    assert dual.objective(a, b) == pytest.approx(cost, abs=1e-8)
    assert brute_force_cost(a, b, M) == pytest.approx(cost, abs=1e-6)


def test_oracle_agreement_and_strong_duality(rng):
    startTime = time.time()
    for _ in range(50):
        n, m = rng.integers(1, 6, size=2)
        a, b = random_simplex(rng, n), random_simplex(rng, m)
        M = rng.uniform(0.0, 1.0, size=(n, m))
        cost, plan = solve_exact_primal(a, b, M)
        dual = solve_exact_dual(a, b, M)
        assert cost == pytest.approx(brute_force_cost(a, b, M), abs=1e-6)
        assert abs(cost - dual.objective(a, b)) <= 1e-8
        assert dual.max_violation(M) <= 1e-8
        assert abs(dual.alpha.sum()) <= 1e-10
        assert plan.is_feasible()
    assert time.time() - startTime < 5


def test_subgradient_inequality_and_convexity(rng):
    n, m = 4, 5
    b = random_simplex(rng, m)
    M = rng.uniform(size=(n, m))
    for _ in range(10):
        a, a2 = random_simplex(rng, n), random_simplex(rng, n)
        p_a = solve_exact_primal(a, b, M)[0]
        p_a2 = solve_exact_primal(a2, b, M)[0]
        alpha = solve_exact_dual(a, b, M).alpha
        assert p_a2 >= p_a + alpha @ (a2 - a) - 1e-8
        t = rng.uniform()
        mid = solve_exact_primal(t * a + (1 - t) * a2, b, M)[0]
        assert mid <= t * p_a + (1 - t) * p_a2 + 1e-8


def test_marginal_errors():
    with pytest.raises(ValueError):
        check_marginals([0.5, 0.6], [1.0])
    with pytest.raises(ValueError):
        check_marginals([1.0], [1.0], np.zeros((2, 2)))
    with pytest.raises(ValueError):
        solve_exact_primal([0.5, 0.5], [0.4, 0.4], np.zeros((2, 2)))


def test_size_limits():
    with pytest.raises(InstanceTooLargeError):
        brute_force_cost(np.full(6, 1 / 6), np.full(5, 0.2), np.zeros((6, 5)))
    n = 501
    with pytest.raises(InstanceTooLargeError):
        solve_exact_primal(np.full(n, 1.0 / n), [1.0], np.zeros((n, 1)))


def test_transport_plan_rejects_negative_entries():
    with pytest.raises(ValueError):
        TransportPlan([[0.5, -0.1], [0.0, 0.6]], [0.4, 0.6], [0.5, 0.5])
