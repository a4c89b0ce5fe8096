#!/usr/bin/env python
"""free-support 2-Wasserstein barycenter with at most ``k`` atoms: weights
optimized on the current support, then atoms moved by the Newton update
``X <- Y T^T diag(1/a)`` under a backtracking line search. With one measure,
exact plans and free weights this is Lloyd's k-means.
"""

import logging
import time

import numpy as np

from baryfixed import (DEFAULT_T0, BarycenterTrace, FixedBarycenterProblem, pooled_median_lambda,
                       barycenter_fixed_support)
from exactot import solve_exact_primal
from measures import DiscreteMeasure, WeightConstraintSet, as_points, build_cost_matrix
from sinkhorn import DEFAULT_MAX_ITER, DEFAULT_TOL, LAMBDA_SCALE, LOOSE_TOL, SinkhornBatch

logger = logging.getLogger("barycenterLogger")

DEFAULT_MAX_OUTER = 100
DEFAULT_OUTER_TOL = 1e-5
DEFAULT_WINDOW = 3
DEFAULT_INNER_ITERATIONS = 50
DEFAULT_FREEZE_BELOW = 1e-9
LINE_SEARCH_STEPS = (1.0, 0.5, 0.25, 0.125)
PLAN_MODES = ('smoothed', 'exact')

# -----------------------------------------------------------------------------

def _distinct_points(points, weights):
    """unique columns of ``points`` carrying positive mass, with merged mass"""
    keep = weights > 0
    uniq, inverse = np.unique(points[:, keep].T, axis=0, return_inverse=True)
    mass = np.bincount(np.asarray(inverse).ravel(), weights=weights[keep], minlength=uniq.shape[0])
    return uniq.T, mass


def sample_support(points, weights, k, seed=0):
    """
    ``k`` distinct atoms drawn without replacement, with probability
    proportional to mass.

    :param points: ``d x m`` candidate atoms
    :param weights: nonnegative masses of the candidates
    :param int k: number of atoms
    :param int seed: random seed
    :returns: ``d x k`` array
    :raises ValueError: when fewer than ``k`` distinct atoms carry mass
    """

    points = as_points(points)
    weights = np.asarray(weights, dtype=float).ravel()
    if k < 1:
        raise ValueError("k must be at least 1, got {}".format(k))
    uniq, mass = _distinct_points(points, weights)
    if k > uniq.shape[1]:
        raise ValueError("k={} exceeds the number of distinct points ({})".format(k, uniq.shape[1]))
    rng = np.random.default_rng(seed)
    idx = rng.choice(uniq.shape[1], size=k, replace=False, p=mass / mass.sum())
    return uniq[:, idx].copy()


def nearest_atoms(X, Y):
    """index of the closest column of ``X`` for every column of ``Y``, ties to the lowest index"""
    return np.argmin(build_cost_matrix(X, Y, 2.0).entries, axis=0)

# -----------------------------------------------------------------------------

class FreeBarycenterProblem:
    """
    barycenter of ``N`` measures in ``R^d`` supported on at most ``k`` free
    atoms, squared euclidean ground cost.

    ``step=None`` selects the line search over ``1, 1/2, 1/4, 1/8``; a number
    in ``[0, 1]`` is used as a preset step. ``init`` is a ``d x k`` support or
    ``None`` for a mass-weighted random draw of pooled atoms. ``plans='exact'``
    (one measure, full simplex) uses exact plans and the nearest-atom weights,
    i.e. the k-means reference path.
    """

    def __init__(self, measures, k, theta=None, lam=None, step=None, init=None, seed=0,
                 max_outer=DEFAULT_MAX_OUTER, tol=DEFAULT_OUTER_TOL, window=DEFAULT_WINDOW,
                 inner_iterations=DEFAULT_INNER_ITERATIONS, freeze_below=DEFAULT_FREEZE_BELOW,
                 plans='smoothed', t0=DEFAULT_T0, sinkhorn_tol=DEFAULT_TOL, sinkhorn_max_iter=DEFAULT_MAX_ITER,
                 log_domain=False, doconcurrent=False, lambda_scale=LAMBDA_SCALE):
        measures = list(measures)
        if not measures:
            raise ValueError("barycenter needs at least one measure")
        for i, m in enumerate(measures):
            if not isinstance(m, DiscreteMeasure):
                raise ValueError("measure {} is not a DiscreteMeasure".format(i))
            if m.dim != measures[0].dim:
                raise ValueError("measure {} lives in R^{}, expected R^{}".format(i, m.dim, measures[0].dim))
        k = int(k)
        if k < 1:
            raise ValueError("k must be at least 1, got {}".format(k))
        if isinstance(theta, str):
            theta = WeightConstraintSet.parse(theta)
        theta = theta if theta is not None else WeightConstraintSet.full_simplex()
        theta.validate(k)
        if step is not None and not 0 <= step <= 1:
            raise ValueError("preset step must lie in [0, 1], got {}".format(step))
        if plans not in PLAN_MODES:
            raise ValueError("plans must be one of {}, got {!r}".format(PLAN_MODES, plans))
        if plans == 'exact' and (len(measures) != 1 or theta.kind != 'simplex'):
            raise ValueError("exact plans are only supported for one measure on the full simplex")

        if init is None or (isinstance(init, str) and init == 'random'):
            pooled = np.hstack([m.support for m in measures])
            mass = np.concatenate([m.weights for m in measures]) / len(measures)
            X0 = sample_support(pooled, mass, k, seed)
        else:
            X0 = as_points(init).copy()
            if X0.shape != (measures[0].dim, k):
                raise ValueError("initial support must be {}x{}, got {}x{}".format(measures[0].dim, k, *X0.shape))

        self.measures_ = measures
        self.k_ = k
        self.theta_ = theta
        self.step_ = None if step is None else float(step)
        self.X0_ = X0
        self.seed_ = int(seed)
        self.max_outer_ = int(max_outer)
        self.tol_ = float(tol)
        self.window_ = int(window)
        self.inner_iterations_ = int(inner_iterations)
        self.freeze_below_ = freeze_below
        self.plans_ = plans
        self.t0_ = float(t0)
        self.sinkhorn_tol_ = float(sinkhorn_tol)
        self.sinkhorn_max_iter_ = int(sinkhorn_max_iter)
        self.log_domain_ = bool(log_domain)
        self.doconcurrent_ = bool(doconcurrent)
        if lam is None:
            lam = pooled_median_lambda([build_cost_matrix(X0, m.support, 2.0) for m in measures], lambda_scale)
        self.lam_ = float(lam)

    def __repr__(self):
        return "<FreeBarycenterProblem k={} N={} {} lam={:.6g}>".format(
            self.k_, len(self.measures_), self.theta_, self.lam_)

    @property
    def measures(self):
        return self.measures_

    @property
    def k(self):
        return self.k_

    @property
    def theta(self):
        return self.theta_

    @property
    def lam(self):
        return self.lam_

    @property
    def step(self):
        return self.step_

    @property
    def init(self):
        return self.X0_

    @property
    def max_outer(self):
        return self.max_outer_

    @property
    def tol(self):
        return self.tol_

    @property
    def window(self):
        return self.window_

    @property
    def inner_iterations(self):
        return self.inner_iterations_

    @property
    def freeze_below(self):
        return self.freeze_below_

    @property
    def seed(self):
        return self.seed_

    @property
    def plans(self):
        return self.plans_

    def make_batch(self):
        return SinkhornBatch(self.lam_, tol=self.sinkhorn_tol_, max_iter=self.sinkhorn_max_iter_,
                             log_domain=self.log_domain_, doconcurrent=self.doconcurrent_, loose_tol=LOOSE_TOL)

    def fixed_problem(self, X):
        """weight subproblem on the support ``X`` with the inner iteration budget"""
        return FixedBarycenterProblem(X, self.measures_, p=2.0, theta=self.theta_, lam=self.lam_, t0=self.t0_,
                                      max_outer=self.inner_iterations_, sinkhorn_tol=self.sinkhorn_tol_,
                                      sinkhorn_max_iter=self.sinkhorn_max_iter_, log_domain=self.log_domain_,
                                      doconcurrent=self.doconcurrent_)

# -----------------------------------------------------------------------------

def newton_location_update(X, a, plans, step=1.0, freeze_below=None):
    """
    relaxed Newton step on the atom locations

        X <- (1 - step) X + step (1/N sum_i Y_i T_i^T) diag(1/a)

    The division uses the row sums of the averaged plans (equal to ``a`` up to
    the solver tolerance), so every target column is a convex combination of
    target atoms.

    :param X: ``d x k`` current atoms
    :param a: weights of the atoms
    :param plans: sequence of ``(T_i, Y_i)``, ``T_i`` of shape ``k x m_i``
    :param float step: relaxation in ``[0, 1]``
    :param freeze_below: atoms with weight below this stay in place; None
        rejects any nonpositive weight
    :rtype: numpy.ndarray
    """

    X = as_points(X)
    a = np.asarray(a, dtype=float).ravel()
    plans = list(plans)
    if not plans:
        raise ValueError("need at least one plan")
    if not 0 <= step <= 1:
        raise ValueError("step must lie in [0, 1], got {}".format(step))
    if a.size != X.shape[1]:
        raise ValueError("{} weights for {} atoms".format(a.size, X.shape[1]))
    if freeze_below is None:
        if np.any(a <= 0):
            raise ValueError("Newton update needs strictly positive weights; prune empty atoms first")
        frozen = np.zeros(a.size, dtype=bool)
    else:
        frozen = a < freeze_below

    N = len(plans)
    S = np.zeros_like(X)
    mass = np.zeros(a.size)
    for T, Y in plans:
        T = np.asarray(T, dtype=float)
        Y = as_points(Y)
        if T.shape != (X.shape[1], Y.shape[1]):
            raise ValueError("plan shape {} does not match {} atoms and {} targets".format(
                T.shape, X.shape[1], Y.shape[1]))
        S += Y @ T.T / N
        mass += T.sum(axis=1) / N

    frozen |= mass <= 0
    target = X.copy()
    active = ~frozen
    target[:, active] = S[:, active] / mass[active]
    return (1.0 - step) * X + step * target


def _plans_at(problem, X, a, batch):
    costs = [build_cost_matrix(X, m.support, 2.0) for m in problem.measures]
    if problem.plans == 'exact':
        results = [solve_exact_primal(a, m.weights, M) for m, M in zip(problem.measures, costs)]
        plans = [(plan.matrix, m.support) for (_, plan), m in zip(results, problem.measures)]
        return plans, float(np.mean([cost for cost, _ in results])), 0
    solutions = batch.solve(a, [(m.weights, M) for m, M in zip(problem.measures, costs)])
    plans = [(s.plan.matrix, m.support) for s, m in zip(solutions, problem.measures)]
    return plans, float(np.mean([s.transport_cost for s in solutions])), sum(s.iterations for s in solutions)


def _pushforward_weights(X, measure):
    labels = nearest_atoms(X, measure.support)
    return np.bincount(labels, weights=measure.weights, minlength=X.shape[1])


def barycenter_free_support(problem, batch=None):
    """
    alternate weight optimization on the current support with Newton moves
    of the support.

    Every outer iteration (i) runs the fixed-support solver warm-started at
    the current weights with the inner budget, rejecting the new weights if
    they raise the objective, then (ii) tries the Newton update with steps
    ``1, 1/2, 1/4, 1/8`` (or the preset step), keeping the first one that does
    not raise the objective; after four failures ``1/8`` is taken anyway and
    logged with ``accepted=False``. Stops when the objective changes by less
    than ``tol`` (relative) over ``window`` iterations or after ``max_outer``.

    :param FreeBarycenterProblem problem: the problem
    :param SinkhornBatch batch: optional solver context
    :returns: ``(X_star, a_star, trace)`` at the best objective seen
    :rtype: tuple
    """

    startTime = time.time()
    theta = problem.theta
    k = problem.k
    batch = batch if batch is not None else problem.make_batch()
    X = problem.init.copy()
    a = theta.initial_point(k)
    if problem.plans == 'exact':
        a = _pushforward_weights(X, problem.measures[0])

    plans, f, inner = _plans_at(problem, X, a, batch)
    trace = BarycenterTrace()
    trace.append(0, f, 0.0, inner, weights=a, step=0.0, accepted=True)
    best_X, best_a, best_f = X.copy(), a.copy(), f
    history = [f]
    steps = LINE_SEARCH_STEPS if problem.step is None else (problem.step,)

    for it in range(1, problem.max_outer + 1):
        inner = 0
        if problem.plans == 'exact':
            a_new = _pushforward_weights(X, problem.measures[0])
        elif theta.kind == 'uniform':
            a_new = a
        else:
            a_new, inner_trace = barycenter_fixed_support(problem.fixed_problem(X), initial=a, batch=batch)
            inner = int(sum(r['inner_iters'] for r in inner_trace))
        if a_new is not a:
            plans_new, f_new, n_inner = _plans_at(problem, X, a_new, batch)
            inner += n_inner
            if f_new <= f:
                a, plans, f = a_new, plans_new, f_new
            else:
                logger.debug("bary-free iteration {}: weight update rejected ({:.10g} > {:.10g})".format(
                    it, f_new, f))

        accepted = False
        for step in steps:
            X_try = newton_location_update(X, a, plans, step, problem.freeze_below)
            plans_try, f_try, n_inner = _plans_at(problem, X_try, a, batch)
            inner += n_inner
            if f_try <= f or problem.step is not None:
                accepted = True
                break
        step_norm = float(np.linalg.norm(X_try - X))
        X, plans, f = X_try, plans_try, f_try

        trace.append(it, f, step_norm, inner, weights=a, step=step, accepted=accepted)
        history.append(f)
        logger.debug("bary-free iteration {}: objective {:.10g} step {} accepted {}".format(it, f, step, accepted))
        if f < best_f:
            best_X, best_a, best_f = X.copy(), a.copy(), f

        if len(history) > problem.window:
            ref = history[-problem.window - 1]
            if abs(f - ref) <= problem.tol * max(abs(ref), 1e-300):
                break

    logger.info("bary-free: k={} {} iterations, best objective {:.10g}, {:.3f}s".format(
        k, trace.iterations, best_f, time.time() - startTime))
    return best_X, best_a, trace

# -----------------------------------------------------------------------------

def kmeans_cost(X, Y, b):
    """weighted sum of squared distances to the nearest centroid"""
    M = build_cost_matrix(X, Y, 2.0).entries
    return float(np.asarray(b, dtype=float) @ M.min(axis=0))


def lloyd_iteration(X, Y, b):
    """
    one weighted Lloyd step: assign every point to its nearest centroid,
    move each centroid to the weighted mean of its points. Centroids with
    no mass stay in place.

    :returns: ``(X_new, assignment)``
    """

    X = as_points(X)
    Y = as_points(Y)
    b = np.asarray(b, dtype=float).ravel()
    labels = nearest_atoms(X, Y)
    X_new = X.copy()
    for j in range(X.shape[1]):
        mask = labels == j
        mass = b[mask].sum()
        if mass > 0:
            X_new[:, j] = Y[:, mask] @ b[mask] / mass
    return X_new, labels


def lloyd_kmeans(Y, b, k, seed=0, init=None, max_iter=300):
    """
    weighted k-means by Lloyd iterations until the assignment is stable. An
    empty cluster is reseeded at the point farthest from its centroid.

    :param Y: ``d x m`` points
    :param b: nonnegative weights
    :param int k: number of centroids, at most the number of distinct points
    :param int seed: seed of the mass-weighted initial draw
    :param init: optional ``d x k`` initial centroids
    :returns: ``(centroids, assignment)``
    :rtype: tuple(numpy.ndarray, numpy.ndarray)
    """

    Y = as_points(Y)
    b = np.asarray(b, dtype=float).ravel()
    if b.size != Y.shape[1]:
        raise ValueError("{} weights for {} points".format(b.size, Y.shape[1]))
    X = sample_support(Y, b, k, seed) if init is None else as_points(init).copy()
    if X.shape[1] != k:
        raise ValueError("initial centroids must have {} columns".format(k))

    labels = None
    for it in range(max_iter):
        new_labels = nearest_atoms(X, Y)
        empty = [j for j in range(k) if b[new_labels == j].sum() <= 0]
        if empty:
            dist = build_cost_matrix(X, Y, 2.0).entries[new_labels, np.arange(Y.shape[1])]
            dist = np.where(b > 0, dist, -1.0)
            for j in empty:
                far = int(np.argmax(dist))
                logger.debug("lloyd: reseeding empty cluster {} at point {}".format(j, far))
                X[:, j] = Y[:, far]
                dist[far] = -1.0
            new_labels = nearest_atoms(X, Y)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        X, _ = lloyd_iteration(X, Y, b)
    return X, nearest_atoms(X, Y)
