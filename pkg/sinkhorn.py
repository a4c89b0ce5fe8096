#!/usr/bin/env python
"""entropically smoothed optimal transport by Sinkhorn matrix scaling.

The regularized problem ``min <T, M> - h(T)/lam`` over ``U(a, b)`` has the
unique solution ``diag(u) K diag(v)`` with ``K = exp(-lam M)``; the scaling
pair ``(u, v)`` is unique up to ``(c u, v / c)``. ``log(u)/lam`` centred to
sum zero is the gradient of the smoothed value in ``a``.
"""

import concurrent.futures
import logging
import time

import numpy as np
from scipy.special import logsumexp, xlogy

from exactot import TransportPlan
from measures import CostMatrix, as_cost_array

logger = logging.getLogger("barycenterLogger")

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 10000
CHECK_EVERY = 10
LAMBDA_SCALE = 60.0
MARGINAL_SUM_TOL = 1e-8
ANNEAL_START = 50.0
ANNEAL_TOL = 1e-3
FALLBACK_BUDGET = 5
LOOSE_TOL = 1e-3


class SinkhornUnderflowError(ArithmeticError):
    """the Gibbs kernel or the scalings left the floating point range"""


class SinkhornConvergenceError(RuntimeError):
    """scaling did not reach the requested marginal tolerance"""

    def __init__(self, msg, index=None):
        super().__init__(msg)
        self.index = index

# -----------------------------------------------------------------------------

def median_lambda(M, scale=LAMBDA_SCALE):
    """
    default regularization strength ``scale / median(M)``, median taken over
    the strictly positive entries (lower median).

    :param M: cost matrix
    :param float scale: numerator, 60 by default
    :rtype: float
    """

    cost = M if isinstance(M, CostMatrix) else CostMatrix.precomputed(as_cost_array(M))
    return float(scale) / cost.median_positive()


def _check_lambda(lam):
    lam = float(lam)
    if not lam > 0 or not np.isfinite(lam):
        raise ValueError("lambda must be a positive finite number, got {}".format(lam))
    return lam


def _check_positive_marginals(a, b, shape=None):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    for name, w in (('a', a), ('b', b)):
        if w.size == 0:
            raise ValueError("marginal {} is empty".format(name))
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("sinkhorn needs strictly positive weights, {} has min {}".format(name, w.min()))
        if abs(w.sum() - 1.0) > MARGINAL_SUM_TOL:
            raise ValueError("marginal {} sums to {:.12g}, not 1".format(name, w.sum()))
    if shape is not None and shape != (a.size, b.size):
        raise ValueError("cost matrix shape {} does not match marginals ({}, {})".format(shape, a.size, b.size))
    return a, b

# -----------------------------------------------------------------------------

class GibbsKernel:
    """``K = exp(-lam M)`` and ``log K`` of one cost matrix, built on first use."""

    def __init__(self, cost, lam):
        self.cost_ = as_cost_array(cost)
        self.lam_ = _check_lambda(lam)
        self.K_ = None
        self.log_K_ = None

    def __repr__(self):
        return "<GibbsKernel {}x{} lam={:.6g}>".format(*self.cost_.shape, self.lam_)

    @property
    def cost(self):
        return self.cost_

    @property
    def lam(self):
        return self.lam_

    @property
    def shape(self):
        return self.cost_.shape

    @property
    def log_K(self):
        if self.log_K_ is None:
            self.log_K_ = -self.lam_ * self.cost_
        return self.log_K_

    @property
    def K(self):
        if self.K_ is None:
            self.K_ = np.exp(self.log_K)
        return self.K_

    def underflows(self):
        """True when some row or column of K is identically zero"""
        K = self.K
        return bool(np.any(K.sum(axis=1) == 0) or np.any(K.sum(axis=0) == 0))


def _as_kernel(M, lam, kernel):
    if kernel is None:
        return GibbsKernel(M, lam)
    if M is not None and as_cost_array(M).shape != kernel.shape:
        raise ValueError("kernel shape {} does not match cost shape".format(kernel.shape))
    if lam is not None and float(lam) != kernel.lam:
        raise ValueError("kernel was built for lambda {}, got {}".format(kernel.lam, lam))
    return kernel

# -----------------------------------------------------------------------------

class ScalingPair:
    """
    scaling vectors ``(u, v)`` of one Sinkhorn run together with its
    iteration count, convergence flag and final l1 error on the row marginal.
    """

    def __init__(self, u, v, iterations=0, converged=False, error=np.inf):
        self.u_ = np.asarray(u, dtype=float)
        self.v_ = np.asarray(v, dtype=float)
        self.iterations_ = int(iterations)
        self.converged_ = bool(converged)
        self.error_ = float(error)

    def __repr__(self):
        return "<{} n={} m={} iterations={} converged={} error={:.3g}>".format(
            type(self).__name__, self.u.size, self.v.size, self.iterations_, self.converged_, self.error_)

    @property
    def u(self):
        return self.u_

    @property
    def v(self):
        return self.v_

    @property
    def log_u(self):
        return np.log(self.u_)

    @property
    def log_v(self):
        return np.log(self.v_)

    @property
    def iterations(self):
        return self.iterations_

    @property
    def converged(self):
        return self.converged_

    @property
    def error(self):
        return self.error_

    def plan_matrix(self, kernel):
        return self.u_[:, None] * kernel.K * self.v_[None, :]

    def rescaled(self, c):
        """the equivalent pair ``(c u, v / c)``"""
        return ScalingPair(c * self.u_, self.v_ / c, self.iterations_, self.converged_, self.error_)

    def counted(self, iterations):
        """the same pair reporting ``iterations`` sweeps"""
        return ScalingPair(self.u_, self.v_, iterations, self.converged_, self.error_)


class LogScalingPair(ScalingPair):
    """scaling pair kept as ``(log u, log v)``, returned by the log-domain variant"""

    def __init__(self, log_u, log_v, iterations=0, converged=False, error=np.inf):
        self.log_u_ = np.asarray(log_u, dtype=float)
        self.log_v_ = np.asarray(log_v, dtype=float)
        self.iterations_ = int(iterations)
        self.converged_ = bool(converged)
        self.error_ = float(error)

    @property
    def u(self):
        return np.exp(self.log_u_)

    @property
    def v(self):
        return np.exp(self.log_v_)

    @property
    def log_u(self):
        return self.log_u_

    @property
    def log_v(self):
        return self.log_v_

    def plan_matrix(self, kernel):
        return np.exp(self.log_u_[:, None] + kernel.log_K + self.log_v_[None, :])

    def rescaled(self, c):
        shift = np.log(c)
        return LogScalingPair(self.log_u_ + shift, self.log_v_ - shift,
                              self.iterations_, self.converged_, self.error_)

    def counted(self, iterations):
        return LogScalingPair(self.log_u_, self.log_v_, iterations, self.converged_, self.error_)

# -----------------------------------------------------------------------------

def sinkhorn_scaling(a, b, M, lam, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, warm_u=None,
                     kernel=None, check_every=CHECK_EVERY):
    """
    Sinkhorn fixed point ``u = 1 / (K~ (b / (K^T u)))`` with ``K~ = diag(1/a) K``.

    The l1 violation of the row marginal is checked every ``check_every``
    iterations and at the last one; ``v`` is always returned consistent with
    ``u`` so the column marginal holds to round-off.

    :param a: strictly positive simplex vector of length n
    :param b: strictly positive simplex vector of length m
    :param M: ``n x m`` costs
    :param float lam: regularization strength
    :param float tol: l1 tolerance on the row marginal, 0 runs exactly ``max_iter`` sweeps
    :param int max_iter: maximum number of sweeps
    :param warm_u: optional positive starting ``u``, default ``1_n/n``
    :param GibbsKernel kernel: optional prebuilt kernel for ``(M, lam)``
    :rtype: ScalingPair
    """

    kernel = _as_kernel(M, lam, kernel)
    a, b = _check_positive_marginals(a, b, kernel.shape)
    if tol < 0 or max_iter < 1:
        raise ValueError("need tol >= 0 and max_iter >= 1")
    if kernel.underflows():
        logger.warning("Gibbs kernel underflow at lambda={:.6g}, max cost {:.6g}".format(
            kernel.lam, kernel.cost.max()))
        raise SinkhornUnderflowError(
            "exp(-lambda M) has an all-zero row or column at lambda={:.6g}; "
            "use the log-domain variant (--log-domain) or a smaller lambda".format(kernel.lam))

    K = kernel.K
    Kt = K / a[:, None]
    n = a.size
    if warm_u is None:
        u = np.full(n, 1.0 / n)
    else:
        u = np.array(warm_u, dtype=float).ravel()
        if u.size != n or not np.all(np.isfinite(u)) or np.any(u <= 0):
            raise ValueError("warm start must be a positive finite vector of length {}".format(n))

    err = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        v = b / (K.T @ u)
        u = 1.0 / (Kt @ v)
        if it % check_every == 0 or it == max_iter:
            if not np.all(np.isfinite(u)) or np.any(u == 0):
                logger.warning("non-finite scaling after {} sinkhorn iterations".format(it))
                raise SinkhornUnderflowError(
                    "scaling vector left the floating point range after {} iterations; "
                    "use the log-domain variant (--log-domain)".format(it))
            v = b / (K.T @ u)
            err = float(np.abs(u * (K @ v) - a).sum())
            logger.debug("sinkhorn iteration {}: marginal error {:.3e}".format(it, err))
            if err <= tol:
                converged = True
                break

    v = b / (K.T @ u)
    if not converged and tol > 0:
        logger.warning("sinkhorn stopped after {} iterations with marginal error {:.3e} > {:.1e}".format(
            it, err, tol))
    return ScalingPair(u, v, it, converged, err)


def _log_sweeps(log_K, log_a, log_b, f, tol, max_iter, check_every):
    err = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        g = log_b - logsumexp(log_K + f[:, None], axis=0)
        f = log_a - logsumexp(log_K + g[None, :], axis=1)
        if it % check_every == 0 or it == max_iter:
            g = log_b - logsumexp(log_K + f[:, None], axis=0)
            if not np.all(np.isfinite(f)) or not np.all(np.isfinite(g)):
                raise SinkhornConvergenceError(
                    "log-domain potentials became non-finite after {} iterations".format(it))
            rows = np.exp(f + logsumexp(log_K + g[None, :], axis=1))
            err = float(np.abs(rows - np.exp(log_a)).sum())
            logger.debug("log-domain sinkhorn iteration {}: marginal error {:.3e}".format(it, err))
            if err <= tol:
                return f, it, True, err
    return f, it, False, err


def annealing_schedule(lam, max_cost, start=ANNEAL_START):
    """
    increasing strengths ``lam / 2^j, ..., lam / 2`` whose first one has
    ``lam_j * max_cost <= start``; empty when ``lam * max_cost <= start``
    """

    schedule = []
    current = float(lam)
    while current * max_cost > start:
        current /= 2.0
        schedule.append(current)
    return schedule[::-1]


def sinkhorn_log_domain(a, b, M, lam, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, warm_f=None,
                        kernel=None, check_every=CHECK_EVERY, anneal=True):
    """
    same fixed point as :py:func:`sinkhorn_scaling` iterated on ``f = log u``
    and ``g = log v`` with log-sum-exp reductions; never underflows.

    For ``lam * max(M)`` above ``ANNEAL_START`` the potentials are first
    brought up through a doubling schedule of strengths, each stage started
    from the previous potentials rescaled (``f / lam`` is kept); a warm start
    enters the schedule the same way. A start at large ``lam`` otherwise
    needs a number of sweeps growing linearly in ``lam``.

    :param warm_f: optional starting ``log u`` for strength ``lam``
    :param bool anneal: allow the doubling schedule
    :rtype: LogScalingPair
    """

    kernel = _as_kernel(M, lam, kernel)
    a, b = _check_positive_marginals(a, b, kernel.shape)
    if tol < 0 or max_iter < 1:
        raise ValueError("need tol >= 0 and max_iter >= 1")

    log_a = np.log(a)
    log_b = np.log(b)
    n = a.size
    total = 0
    if warm_f is None:
        f = np.full(n, np.log(1.0 / n))
        previous = None
    else:
        f = np.array(warm_f, dtype=float).ravel()
        if f.size != n or not np.all(np.isfinite(f)):
            raise ValueError("warm start must be a finite vector of length {}".format(n))
        previous = kernel.lam

    schedule = annealing_schedule(kernel.lam, kernel.cost.max()) if anneal else []
    for stage_lam in schedule:
        if previous is not None:
            f = f * (stage_lam / previous)
        f, it, _, _ = _log_sweeps(-stage_lam * kernel.cost, log_a, log_b, f, max(tol, ANNEAL_TOL),
                                  max(max_iter - total, 1), check_every)
        total += it
        previous = stage_lam
    if previous is not None and previous != kernel.lam:
        f = f * (kernel.lam / previous)

    log_K = kernel.log_K
    f, it, converged, err = _log_sweeps(log_K, log_a, log_b, f, tol, max(max_iter - total, 1), check_every)
    total += it
    g = log_b - logsumexp(log_K + f[:, None], axis=0)
    if not converged and tol > 0:
        logger.warning("log-domain sinkhorn stopped after {} iterations with marginal error {:.3e}".format(
            total, err))
    return LogScalingPair(f, g, total, converged, err)

# -----------------------------------------------------------------------------

def smoothed_primal(pair, kernel, a=None, b=None, force=False):
    """
    regularized optimal plan ``diag(u) K diag(v)``.

    :param ScalingPair pair: result of a scaling run
    :param GibbsKernel kernel: kernel the pair was computed with
    :param a: row marginal the plan is checked against, default its own row sums
    :param b: column marginal, default its own column sums
    :param bool force: accept a non-converged pair
    :rtype: TransportPlan
    """

    if not pair.converged and not force:
        raise SinkhornConvergenceError(
            "scaling pair did not converge (error {:.3e} after {} iterations)".format(
                pair.error, pair.iterations))
    T = pair.plan_matrix(kernel)
    a = T.sum(axis=1) if a is None else a
    b = T.sum(axis=0) if b is None else b
    return TransportPlan(T, a, b, tol=max(pair.error, DEFAULT_TOL))


def smoothed_dual_alpha(pair, lam, force=False):
    """``log(u)/lam`` centred to sum to zero"""
    if not pair.converged and not force:
        raise SinkhornConvergenceError("scaling pair did not converge")
    alpha = pair.log_u / _check_lambda(lam)
    return alpha - alpha.mean()


def smoothed_dual_objective(a, b, M, lam, pair=None, kernel=None, tol=1e-13, max_iter=DEFAULT_MAX_ITER,
                            log_domain=False):
    """
    smoothed transport value ``d_lam(a, b, M)`` evaluated through the dual at
    the scaling potentials ``alpha = log(u)/lam``, ``beta = log(v)/lam``:

        alpha.a + beta.b - (sum(T) - 1)/lam

    At the fixed point this equals ``<T, M> - h(T)/lam``; being a maximum
    over the potentials, it is insensitive to first order to residual
    scaling errors.

    :param pair: scaling pair at ``(a, b)``; a fresh run is made when missing
    :rtype: float
    """

    lam = _check_lambda(lam)
    kernel = _as_kernel(M, lam, kernel)
    a, b = _check_positive_marginals(a, b, kernel.shape)
    if pair is None:
        solver = sinkhorn_log_domain if log_domain else sinkhorn_scaling
        pair = solver(a, b, None, None, tol=tol, max_iter=max_iter, kernel=kernel)
    T = pair.plan_matrix(kernel)
    return float((pair.log_u @ a + pair.log_v @ b - (T.sum() - 1.0)) / lam)

# -----------------------------------------------------------------------------

class SmoothedSolution:
    """regularized plan, zero-sum dual gradient and costs of one smoothed problem"""

    def __init__(self, plan, alpha, transport_cost, regularized_cost, lam, pair=None):
        self.plan_ = plan
        self.alpha_ = alpha
        self.transport_cost_ = float(transport_cost)
        self.regularized_cost_ = float(regularized_cost)
        self.lam_ = float(lam)
        self.pair_ = pair

    def __repr__(self):
        return "<SmoothedSolution {}x{} cost={:.6g} lam={:.6g}>".format(
            *self.plan_.shape, self.transport_cost_, self.lam_)

    @property
    def plan(self):
        return self.plan_

    @property
    def alpha(self):
        return self.alpha_

    @property
    def transport_cost(self):
        return self.transport_cost_

    @property
    def regularized_cost(self):
        """``<T, M> - h(T)/lam`` with ``h(T) = -sum T log T``"""
        return self.regularized_cost_

    @property
    def lam(self):
        return self.lam_

    @property
    def pair(self):
        return self.pair_

    @property
    def iterations(self):
        return self.pair_.iterations if self.pair_ is not None else 0


def _solution(a, b, kernel, pair, force=False):
    plan = smoothed_primal(pair, kernel, a, b, force)
    T = plan.matrix
    cost = float(np.sum(T * kernel.cost))
    regularized = cost + float(np.sum(xlogy(T, T))) / kernel.lam
    return SmoothedSolution(plan, smoothed_dual_alpha(pair, kernel.lam, force), cost, regularized, kernel.lam,
                            pair)


def smoothed_transport(a, b, M, lam=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, log_domain=False,
                       warm_u=None, kernel=None):
    """
    solve one smoothed transport problem, ``lam`` defaulting to the median
    heuristic.

    :raises SinkhornConvergenceError: when ``max_iter`` is exhausted
    :rtype: SmoothedSolution
    """

    if lam is None:
        lam = kernel.lam if kernel is not None else median_lambda(M)
    kernel = _as_kernel(M, lam, kernel)
    if log_domain:
        warm_f = None if warm_u is None else np.log(warm_u)
        pair = sinkhorn_log_domain(a, b, None, None, tol, max_iter, warm_f=warm_f, kernel=kernel)
    else:
        pair = sinkhorn_scaling(a, b, None, None, tol, max_iter, warm_u=warm_u, kernel=kernel)
    return _solution(a, b, kernel, pair)

# -----------------------------------------------------------------------------

class SinkhornBatch:
    """
    context for repeated batches of smoothed problems sharing the row
    marginal ``a``: keeps one warm start (``log u``) and one Gibbs kernel per
    measure index across calls, and optionally solves the batch in a thread
    pool.

    A problem that misses the tolerance from its warm start is rerun from the
    uniform start; when that misses too, the best scaling so far is carried
    on in the log domain with ``FALLBACK_BUDGET`` times the sweeps (annealed
    from scratch when no finite scaling exists). A pair still above ``tol``
    then raises, unless ``loose_tol`` is set and the pair is within it, in
    which case it is used with a warning. A kernel is rebuilt when the cost
    matrix object of its index changes.
    """

    def __init__(self, lam, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, log_domain=False,
                 doconcurrent=False, max_workers=None, check_every=CHECK_EVERY, loose_tol=None):
        self.lam_ = _check_lambda(lam)
        self.tol_ = float(tol)
        self.max_iter_ = int(max_iter)
        self.log_domain_ = bool(log_domain)
        self.doconcurrent_ = bool(doconcurrent)
        self.max_workers_ = max_workers
        self.check_every_ = int(check_every)
        self.loose_tol_ = None if loose_tol is None else float(loose_tol)
        self.warm_ = {}
        self.kernels_ = {}
        self.last_iterations_ = []

    def __repr__(self):
        return "<SinkhornBatch lam={:.6g} log_domain={} cached={}>".format(
            self.lam_, self.log_domain_, len(self.kernels_))

    @property
    def lam(self):
        return self.lam_

    @property
    def log_domain(self):
        return self.log_domain_

    @property
    def last_iterations(self):
        """sinkhorn iterations of each problem of the last batch"""
        return list(self.last_iterations_)

    def reset(self):
        self.warm_.clear()
        self.kernels_.clear()

    def kernel(self, index, M):
        cached = self.kernels_.get(index)
        if cached is None or cached[0] is not M:
            cached = (M, GibbsKernel(M, self.lam_))
            self.kernels_[index] = cached
        return cached[1]

    def _run(self, a, b, kernel, start, log_domain, max_iter):
        if log_domain:
            return sinkhorn_log_domain(a, b, None, None, tol=self.tol_, max_iter=max_iter, warm_f=start,
                                       kernel=kernel, check_every=self.check_every_, anneal=start is None)
        warm_u = None
        if start is not None:
            warm_u = np.exp(start)
            if not np.all(np.isfinite(warm_u)) or np.any(warm_u <= 0):
                warm_u = None
        return sinkhorn_scaling(a, b, None, None, tol=self.tol_, max_iter=max_iter, warm_u=warm_u,
                                kernel=kernel, check_every=self.check_every_)

    def solve_one(self, index, a, b, M):
        kernel = self.kernel(index, M)
        warm = self.warm_.pop(index, None)
        if warm is not None and warm.size != np.size(a):
            warm = None

        attempts = [('cold', None, self.log_domain_, self.max_iter_)]
        if warm is not None:
            attempts.insert(0, ('warm', warm, self.log_domain_, self.max_iter_))
        best, failure, total = None, None, 0
        while attempts:
            name, start, log_domain, max_iter = attempts.pop(0)
            try:
                pair = self._run(a, b, kernel, start, log_domain, max_iter)
            except (SinkhornUnderflowError, SinkhornConvergenceError) as e:
                logger.debug("measure {}: {} start failed: {}".format(index, name, e))
                failure = e
                pair = None
            if pair is not None:
                total += pair.iterations
                if pair.converged:
                    best = pair
                    break
                if best is None or pair.error < best.error:
                    best = pair
                logger.debug("measure {}: {} start stopped at marginal error {:.3e}".format(index, name, pair.error))
            if not attempts and name != 'escalated':
                start = None
                if best is not None and np.all(np.isfinite(best.log_u)):
                    start = np.array(best.log_u)
                attempts.append(('escalated', start, True, FALLBACK_BUDGET * self.max_iter_))

        if best is None:
            raise SinkhornConvergenceError("measure {}: {}".format(index, failure), index=index) from failure
        if not best.converged:
            if self.loose_tol_ is None or not best.error <= self.loose_tol_:
                raise SinkhornConvergenceError(
                    "measure {}: sinkhorn did not converge in {} iterations (error {:.3e})".format(
                        index, total, best.error), index=index)
            logger.warning("measure {}: using a scaling at marginal error {:.3e} after {} iterations".format(
                index, best.error, total))
        self.warm_[index] = np.array(best.log_u)
        return _solution(a, b, kernel, best.counted(total), force=not best.converged)

    def solve(self, a, problems):
        """
        :param a: shared row marginal
        :param problems: sequence of ``(b_i, M_i)``
        :returns: one :py:class:`SmoothedSolution` per problem, in order
        :rtype: list
        """

        problems = list(problems)
        startTime = time.time()
        if not self.doconcurrent_ or len(problems) < 2:
            results = [self.solve_one(i, a, b, M) for i, (b, M) in enumerate(problems)]
        else:
            with concurrent.futures.ThreadPoolExecutor(
                    max_workers=self.max_workers_ or len(problems)) as executor:
                futures = [executor.submit(self.solve_one, i, a, b, M) for i, (b, M) in enumerate(problems)]
                results = []
                try:
                    for future in futures:
                        results.append(future.result())
                except Exception:
                    for future in futures:
                        future.cancel()
                    raise
        self.last_iterations_ = [r.iterations for r in results]
        logger.debug("smoothed batch of {} problems took {:.3f}s".format(len(problems), time.time() - startTime))
        return results


def smoothed_transport_batch(a, problems, lam, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, log_domain=False,
                             batch=None, doconcurrent=False):
    """
    solve ``N`` smoothed problems sharing the row marginal ``a``; results are
    those of ``N`` independent :py:func:`smoothed_transport` calls. Passing a
    :py:class:`SinkhornBatch` keeps warm starts across successive calls.

    :raises SinkhornConvergenceError: on the first failing problem, with its ``index``
    :rtype: list(SmoothedSolution)
    """

    if batch is None:
        batch = SinkhornBatch(lam, tol=tol, max_iter=max_iter, log_domain=log_domain, doconcurrent=doconcurrent)
    return batch.solve(a, problems)
