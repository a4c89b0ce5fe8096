#!/usr/bin/env python
"""fixed-support Wasserstein barycenter: weights ``a`` on a prescribed
support ``X`` minimizing ``f(a) = 1/N sum_i W(a, b_i)`` over a constraint set
Theta, by accelerated Bregman (entropic mirror) subgradient descent with the
smoothed dual optima as gradients.
"""

import logging
import time

import numpy as np
import pandas as pd

from measures import (CostMatrix, DiscreteMeasure, WeightConstraintSet, as_points, build_cost_matrix,
                      entropy)
from sinkhorn import DEFAULT_MAX_ITER, DEFAULT_TOL, LAMBDA_SCALE, LOOSE_TOL, SinkhornBatch

logger = logging.getLogger("barycenterLogger")

DEFAULT_T0 = 1.0
DEFAULT_MAX_OUTER = 300
DEFAULT_OUTER_TOL = 1e-6
DEFAULT_WINDOW = 5
DEFAULT_MAX_HALVINGS = 10
HALVING_CHECK_ITER = 5
POSITIVITY_FLOOR = 1e-300
ENTROPY_TOL = 1e-8


class ProximalStepError(ArithmeticError):
    """multiplicative update produced non-finite weights"""

# -----------------------------------------------------------------------------

class BarycenterTrace:
    """
    per-iteration log of a barycenter run: iteration, objective, step norm,
    inner sinkhorn iterations and wall time, plus any extra scalar fields.
    Weights of each iterate are kept in memory only.
    """

    FIELDS = ('iter', 'objective', 'step_norm', 'inner_iters', 'wall_ms')

    def __init__(self):
        self.records_ = []
        self.weights_ = []
        self.start_ = time.time()

    def __repr__(self):
        return "<BarycenterTrace {} records>".format(len(self.records_))

    def __len__(self):
        return len(self.records_)

    def __iter__(self):
        return iter(self.records_)

    def __getitem__(self, i):
        return self.records_[i]

    def append(self, iteration, objective, step_norm=0.0, inner_iters=0, weights=None, **extra):
        if self.records_ and iteration <= self.records_[-1]['iter']:
            raise ValueError("trace iterations must increase, got {} after {}".format(
                iteration, self.records_[-1]['iter']))
        record = {
            'iter': int(iteration),
            'objective': float(objective),
            'step_norm': float(step_norm),
            'inner_iters': int(inner_iters),
            'wall_ms': 1000.0 * (time.time() - self.start_),
        }
        record.update(extra)
        self.records_.append(record)
        self.weights_.append(None if weights is None else np.array(weights, dtype=float))
        return record

    @property
    def records(self):
        return list(self.records_)

    @property
    def weights(self):
        return list(self.weights_)

    @property
    def objectives(self):
        return np.array([r['objective'] for r in self.records_])

    @property
    def iterations(self):
        return self.records_[-1]['iter'] if self.records_ else 0

    def to_frame(self):
        if not self.records_:
            return pd.DataFrame(columns=list(self.FIELDS))
        return pd.DataFrame.from_records(self.records_)

# -----------------------------------------------------------------------------

def pooled_median_lambda(costs, scale=LAMBDA_SCALE):
    entries = np.concatenate([np.asarray(M.entries).ravel() for M in costs])
    return float(scale) / CostMatrix.precomputed(entries[None, :]).median_positive()


class FixedBarycenterProblem:
    """
    barycenter of ``N`` measures on the fixed support ``X`` (``d x n``)
    with ground cost ``||x - y||^p``. Cost matrices are built once here.

    ``lam=None`` resolves to ``60 / median`` over the positive entries of all
    cost matrices pooled.
    """

    def __init__(self, X, measures, p=2.0, theta=None, lam=None, t0=DEFAULT_T0,
                 max_outer=DEFAULT_MAX_OUTER, tol=DEFAULT_OUTER_TOL, window=DEFAULT_WINDOW,
                 max_halvings=DEFAULT_MAX_HALVINGS, sinkhorn_tol=DEFAULT_TOL,
                 sinkhorn_max_iter=DEFAULT_MAX_ITER, log_domain=False, doconcurrent=False,
                 lambda_scale=LAMBDA_SCALE, costs=None):
        X = as_points(X)
        measures = list(measures)
        if not measures:
            raise ValueError("barycenter needs at least one measure")
        for i, m in enumerate(measures):
            if not isinstance(m, DiscreteMeasure):
                raise ValueError("measure {} is not a DiscreteMeasure".format(i))
            if m.dim != X.shape[0]:
                raise ValueError("measure {} lives in R^{} but the support is in R^{}".format(i, m.dim, X.shape[0]))
        if not t0 > 0:
            raise ValueError("step size t0 must be positive, got {}".format(t0))
        if isinstance(theta, str):
            theta = WeightConstraintSet.parse(theta)
        theta = theta if theta is not None else WeightConstraintSet.full_simplex()
        theta.validate(X.shape[1])

        self.X_ = X
        self.measures_ = measures
        self.p_ = float(p)
        self.theta_ = theta
        self.costs_ = list(costs) if costs is not None else [build_cost_matrix(X, m.support, p) for m in measures]
        self.lam_ = float(lam) if lam is not None else pooled_median_lambda(self.costs_, lambda_scale)
        self.t0_ = float(t0)
        self.max_outer_ = int(max_outer)
        self.tol_ = float(tol)
        self.window_ = int(window)
        self.max_halvings_ = int(max_halvings)
        self.sinkhorn_tol_ = float(sinkhorn_tol)
        self.sinkhorn_max_iter_ = int(sinkhorn_max_iter)
        self.log_domain_ = bool(log_domain)
        self.doconcurrent_ = bool(doconcurrent)

    def __repr__(self):
        return "<FixedBarycenterProblem n={} N={} {} lam={:.6g}>".format(
            self.size, len(self.measures_), self.theta_, self.lam_)

    @property
    def X(self):
        return self.X_

    @property
    def measures(self):
        return self.measures_

    @property
    def costs(self):
        return self.costs_

    @property
    def size(self):
        return self.X_.shape[1]

    @property
    def p(self):
        return self.p_

    @property
    def theta(self):
        return self.theta_

    @property
    def lam(self):
        return self.lam_

    @property
    def t0(self):
        return self.t0_

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
    def max_halvings(self):
        return self.max_halvings_

    @property
    def problems(self):
        """``(b_i, M_i)`` pairs fed to the smoothed solver"""
        return [(m.weights, M) for m, M in zip(self.measures_, self.costs_)]

    def make_batch(self):
        return SinkhornBatch(self.lam_, tol=self.sinkhorn_tol_, max_iter=self.sinkhorn_max_iter_,
                             log_domain=self.log_domain_, doconcurrent=self.doconcurrent_, loose_tol=LOOSE_TOL)

    def evaluate(self, a, batch=None):
        """
        smoothed subproblems at ``a``.

        :returns: ``(alpha_bar, objective, inner_iters, solutions)`` where the
            objective is the mean unregularized transport cost
        """

        batch = batch if batch is not None else self.make_batch()
        solutions = batch.solve(a, self.problems)
        alpha_bar = np.mean([s.alpha for s in solutions], axis=0)
        alpha_bar -= alpha_bar.mean()
        objective = float(np.mean([s.transport_cost for s in solutions]))
        inner = int(sum(s.iterations for s in solutions))
        return alpha_bar, objective, inner, solutions

# -----------------------------------------------------------------------------

def subgradient_alpha_bar(a, X, measures, lam, p=2.0, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                          log_domain=False, batch=None):
    """
    mean of the smoothed dual optima ``alpha_i`` of the ``N`` subproblems at
    weights ``a``: a zero-sum subgradient of the barycenter objective.

    :raises SinkhornConvergenceError: carrying the failing measure index
    :rtype: numpy.ndarray
    """

    problem = FixedBarycenterProblem(X, measures, p=p, lam=lam, sinkhorn_tol=tol,
                                     sinkhorn_max_iter=max_iter, log_domain=log_domain)
    return problem.evaluate(np.asarray(a, dtype=float), batch)[0]


def barycenter_objective(a, X, measures, lam, p=2.0, regularized=False, tol=DEFAULT_TOL,
                         max_iter=DEFAULT_MAX_ITER, log_domain=False):
    """
    smoothed barycenter objective at ``a``: the mean transport cost of the
    regularized plans, or with ``regularized=True`` the mean regularized cost.

    :rtype: float
    """

    problem = FixedBarycenterProblem(X, measures, p=p, lam=lam, sinkhorn_tol=tol,
                                     sinkhorn_max_iter=max_iter, log_domain=log_domain)
    solutions = problem.evaluate(np.asarray(a, dtype=float))[3]
    if regularized:
        return float(np.mean([s.regularized_cost for s in solutions]))
    return float(np.mean([s.transport_cost for s in solutions]))

# -----------------------------------------------------------------------------

def _normalized_exp(log_c, hint=''):
    shifted = log_c - np.max(log_c)
    c = np.exp(shifted)
    if not np.all(np.isfinite(c)):
        raise ProximalStepError("multiplicative update overflowed{}; use a smaller step size t0".format(hint))
    c = np.maximum(c, POSITIVITY_FLOOR)
    return c / c.sum()


def _tempered(log_a, g, nu):
    return _normalized_exp((log_a - g) / (1.0 + nu))


def _entropy_projection(log_a, g, tau):
    n = log_a.size
    hi = 1.0
    while entropy(_tempered(log_a, g, hi)) < tau:
        hi *= 2.0
        if hi > 1e18:
            return np.full(n, 1.0 / n)
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        h = entropy(_tempered(log_a, g, mid))
        if h >= tau:
            hi = mid
            if h - tau <= ENTROPY_TOL:
                break
        else:
            lo = mid
    return _tempered(log_a, g, hi)


def bregman_proximal_step(a, g, theta):
    """
    entropic proximal map ``argmin_{c in Theta} g.c + KL(c || a)``.

    - full simplex: ``c ∝ a * exp(-g)``
    - uniform singleton: ``1_n/n``
    - entropy level set ``H(c) >= tau``: ``c ∝ exp((log a - g)/(1 + nu))``,
      ``nu >= 0`` the smallest multiplier meeting the level, found by bisection

    :param a: strictly positive simplex vector
    :param g: scaled gradient
    :param WeightConstraintSet theta: constraint set
    :raises ProximalStepError: on non-finite input or update
    :rtype: numpy.ndarray
    """

    a = np.asarray(a, dtype=float).ravel()
    g = np.asarray(g, dtype=float).ravel()
    if a.shape != g.shape:
        raise ValueError("weights and gradient differ in length ({} vs {})".format(a.size, g.size))
    if np.any(a <= 0):
        raise ValueError("proximal step needs strictly positive weights")
    if not np.all(np.isfinite(g)):
        raise ProximalStepError("gradient has non-finite entries; use a smaller step size t0")
    n = a.size
    if theta.kind == 'uniform':
        return np.full(n, 1.0 / n)

    log_a = np.log(a)
    c = _normalized_exp(log_a - g, hint=' (max |g| = {:.3g})'.format(np.abs(g).max()))
    if theta.kind == 'entropy':
        theta.validate(n)
        if theta.tau >= np.log(n) - 1e-12:
            return np.full(n, 1.0 / n)
        if entropy(c) < theta.tau:
            c = _entropy_projection(log_a, g, theta.tau)
    return c

# -----------------------------------------------------------------------------

def _accelerated_descent(problem, a0, t0, batch, check_growth):
    theta = problem.theta
    a_hat = a0.copy()
    a_tilde = a0.copy()
    trace = BarycenterTrace()
    best_a, best_obj = a0.copy(), np.inf
    history = []

    for t in range(1, problem.max_outer + 1):
        beta = (t + 1) / 2.0
        a = (1.0 - 1.0 / beta) * a_hat + a_tilde / beta
        alpha_bar, obj, inner, _ = problem.evaluate(a, batch)
        if obj < best_obj:
            best_a, best_obj = a.copy(), obj

        a_tilde = bregman_proximal_step(a_tilde, t0 * beta * alpha_bar, theta)
        a_next = (1.0 - 1.0 / beta) * a_hat + a_tilde / beta
        step_norm = float(np.abs(a_next - a_hat).sum())
        a_hat = a_next

        trace.append(t, obj, step_norm, inner, weights=a, t0=t0)
        history.append(obj)
        logger.debug("bary-fixed iteration {}: objective {:.10g} step {:.3e}".format(t, obj, step_norm))

        if check_growth and t == HALVING_CHECK_ITER and obj > history[0]:
            return None
        window = problem.window
        if len(history) > window:
            ref = history[-window - 1]
            if abs(obj - ref) <= problem.tol * max(abs(ref), 1e-300):
                break

    return best_a, best_obj, trace


def barycenter_fixed_support(problem, initial=None, batch=None):
    """
    accelerated mirror descent on the barycenter weights.

    Each iteration queries ``a = (1 - 1/beta) a_hat + a_tilde/beta`` with
    ``beta = (t+1)/2``, moves ``a_tilde`` by the entropic proximal step of
    size ``t0 * beta`` along the mean dual optimum, and averages it into
    ``a_hat``. The step size is halved (up to ``max_halvings`` times) when the
    objective after five iterations is above the starting one. Stops when the
    objective changes by less than ``tol`` (relative) over ``window``
    iterations or after ``max_outer`` iterations.

    :param FixedBarycenterProblem problem: the problem
    :param initial: optional starting weights in Theta, default ``1_n/n``
    :param SinkhornBatch batch: optional solver context carrying warm starts
    :returns: ``(a_star, trace)``, ``a_star`` the best queried iterate
    :rtype: tuple(numpy.ndarray, BarycenterTrace)
    """

    startTime = time.time()
    theta = problem.theta
    n = problem.size
    batch = batch if batch is not None else problem.make_batch()

    if theta.kind == 'uniform':
        a0 = theta.initial_point(n)
        _, obj, inner, _ = problem.evaluate(a0, batch)
        trace = BarycenterTrace()
        trace.append(1, obj, 0.0, inner, weights=a0, t0=problem.t0)
        logger.info("bary-fixed: uniform weights, objective {:.10g}".format(obj))
        return a0, trace

    if initial is None:
        a0 = theta.initial_point(n)
    else:
        a0 = np.array(initial, dtype=float).ravel()
        if a0.size != n or np.any(a0 <= 0) or not theta.contains(a0):
            raise ValueError("initial weights must be strictly positive and lie in {}".format(theta))
        a0 = a0 / a0.sum()

    t0 = problem.t0
    result = None
    for halving in range(problem.max_halvings + 1):
        result = _accelerated_descent(problem, a0, t0, batch, check_growth=halving < problem.max_halvings)
        if result is not None:
            break
        t0 /= 2.0
        logger.info("bary-fixed: objective grew over the first {} iterations, halving t0 to {:.6g}".format(
            HALVING_CHECK_ITER, t0))

    a_star, best_obj, trace = result
    logger.info("bary-fixed: {} iterations, best objective {:.10g}, t0 {:.6g}, {:.3f}s".format(
        trace.iterations, best_obj, t0, time.time() - startTime))
    return a_star, trace
