#!/usr/bin/env python
"""exact optimal transport between discrete measures: primal plan, dual
potentials and an exhaustive vertex-enumeration oracle for tiny instances.

Used to verify the smoothed solvers and by the ``emd`` subcommand.
"""

import logging
from functools import lru_cache

import numpy as np
import ot

from measures import as_cost_array

logger = logging.getLogger("barycenterLogger")

MARGINAL_TOL = 1e-8
FEASIBILITY_TOL = 1e-8
MAX_EXACT_SIZE = 500
MAX_BRUTE_FORCE_CELLS = 25
EMD_MAX_ITER = 1000000


class InstanceTooLargeError(ValueError):
    """instance exceeds what the exact solvers accept"""

# -----------------------------------------------------------------------------

class TransportPlan:
    """
    coupling ``T`` in the transportation polytope ``U(a, b)``: nonnegative,
    row sums ``a``, column sums ``b``.
    """

    def __init__(self, matrix, a, b, tol=MARGINAL_TOL):
        matrix_ = np.array(matrix, dtype=float, ndmin=2)
        a_ = np.asarray(a, dtype=float).ravel()
        b_ = np.asarray(b, dtype=float).ravel()
        if matrix_.shape != (a_.size, b_.size):
            raise ValueError("plan shape {} does not match marginals ({}, {})".format(
                matrix_.shape, a_.size, b_.size))
        if np.any(matrix_ < -tol):
            raise ValueError("plan has negative entries (min {})".format(matrix_.min()))
        self.matrix_ = np.maximum(matrix_, 0.0)
        self.a_ = a_
        self.b_ = b_
        self.tol_ = tol

    def __repr__(self):
        return "<TransportPlan {}x{}>".format(*self.matrix_.shape)

    @property
    def matrix(self):
        return self.matrix_

    @property
    def a(self):
        return self.a_

    @property
    def b(self):
        return self.b_

    @property
    def shape(self):
        return self.matrix_.shape

    @property
    def nnz(self):
        return int(np.count_nonzero(self.matrix_ > 0))

    def marginal_errors(self):
        """l1 violations of the row and the column marginal"""
        return (float(np.abs(self.matrix_.sum(axis=1) - self.a_).sum()),
                float(np.abs(self.matrix_.sum(axis=0) - self.b_).sum()))

    def is_feasible(self, tol=None):
        tol = self.tol_ if tol is None else tol
        row_err, col_err = self.marginal_errors()
        return row_err <= tol * self.a_.size and col_err <= tol * self.b_.size

    def cost(self, M):
        return float(np.sum(self.matrix_ * as_cost_array(M)))


class DualPotentials:
    """
    feasible point ``(alpha, beta)`` of the dual polyhedron
    ``alpha_i + beta_j <= m_ij``, alpha normalized to sum to zero.
    """

    def __init__(self, alpha, beta):
        self.alpha_ = np.asarray(alpha, dtype=float).ravel()
        self.beta_ = np.asarray(beta, dtype=float).ravel()

    def __repr__(self):
        return "<DualPotentials n={} m={}>".format(self.alpha_.size, self.beta_.size)

    @property
    def alpha(self):
        return self.alpha_

    @property
    def beta(self):
        return self.beta_

    def objective(self, a, b):
        return float(self.alpha_ @ np.asarray(a, dtype=float) + self.beta_ @ np.asarray(b, dtype=float))

    def max_violation(self, M):
        """largest ``alpha_i + beta_j - m_ij`` (<= 0 when feasible)"""
        return float(np.max(self.alpha_[:, None] + self.beta_[None, :] - as_cost_array(M)))

    def is_feasible(self, M, tol=FEASIBILITY_TOL):
        return self.max_violation(M) <= tol

# -----------------------------------------------------------------------------

def check_marginals(a, b, M=None, tol=MARGINAL_TOL):
    """
    validate a pair of marginals (and optionally the cost shape) for the
    exact solvers; zero entries are allowed.

    :returns: ``(a, b)`` as float arrays
    """

    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("marginals must be nonempty")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("marginals must be nonnegative")
    if abs(a.sum() - 1.0) > tol or abs(b.sum() - 1.0) > tol:
        raise ValueError("marginals must sum to 1 (got {:.12g} and {:.12g})".format(a.sum(), b.sum()))
    if M is not None:
        shape = as_cost_array(M).shape
        if shape != (a.size, b.size):
            raise ValueError("cost matrix shape {} does not match marginals ({}, {})".format(
                shape, a.size, b.size))
    return a, b


def _check_size(n, m):
    if n > MAX_EXACT_SIZE or m > MAX_EXACT_SIZE:
        raise InstanceTooLargeError(
            "exact solver accepts at most {0}x{0} instances, got {1}x{2}; "
            "use the sinkhorn subcommand instead".format(MAX_EXACT_SIZE, n, m))


def _network_simplex(a, b, M):
    _check_size(a.size, b.size)
    M = np.ascontiguousarray(as_cost_array(M), dtype=np.float64)
    G, log = ot.emd(a, b, M, numItermax=EMD_MAX_ITER, log=True)
    if log.get('warning'):
        logger.warning("network simplex: {}".format(log['warning']))
    return np.asarray(G, dtype=float), np.asarray(log['u'], dtype=float), np.asarray(log['v'], dtype=float), M

# -----------------------------------------------------------------------------

def solve_exact_primal(a, b, M):
    """
    optimal vertex of ``min <T, M>`` over ``U(a, b)``.

    :param a: row marginal on the simplex (zeros allowed)
    :param b: column marginal on the simplex (zeros allowed)
    :param M: ``n x m`` nonnegative costs
    :returns: ``(cost, plan)``
    :rtype: tuple(float, TransportPlan)
    """

    a, b = check_marginals(a, b, M)
    G, _, _, M = _network_simplex(a, b, M)
    plan = TransportPlan(G, a, b)
    return plan.cost(M), plan


def solve_exact_dual(a, b, M):
    """
    optimal dual potentials of the transport LP, alpha shifted to sum to zero
    (beta receives the opposite shift so the objective is unchanged).

    Rows/columns carrying zero mass get the largest potential keeping the
    constraints feasible; that does not move the objective.

    :rtype: DualPotentials
    """

    a, b = check_marginals(a, b, M)
    _, alpha, beta, M = _network_simplex(a, b, M)

    zero_rows = a == 0
    if zero_rows.any():
        alpha[zero_rows] = np.min(M[zero_rows] - beta[None, :], axis=1)
    zero_cols = b == 0
    if zero_cols.any():
        beta[zero_cols] = np.min(M[:, zero_cols] - alpha[:, None], axis=0)

    shift = alpha.mean()
    return DualPotentials(alpha - shift, beta + shift)

# -----------------------------------------------------------------------------

def brute_force_cost(a, b, M):
    """
    exact transport cost by exhaustive vertex enumeration, tiny instances
    only (``n * m <= 25``).

    Every vertex of ``U(a, b)`` has a tree-shaped support, and a tree always
    has a leaf whose single cell carries the whole residual mass of that
    line. Saturating any cell of the residual problem, i.e. moving
    ``min(r_i, c_j)``, and recursing therefore reaches every vertex; the
    recursion is memoized on the residual marginals.

    :returns: the global optimum
    :rtype: float
    """

    a, b = check_marginals(a, b)
    M = as_cost_array(M)
    n, m = a.size, b.size
    if M.shape != (n, m):
        raise ValueError("cost matrix shape {} does not match marginals ({}, {})".format(M.shape, n, m))
    if n * m > MAX_BRUTE_FORCE_CELLS:
        raise InstanceTooLargeError(
            "brute force accepts at most {} cells, got {}x{}".format(MAX_BRUTE_FORCE_CELLS, n, m))

    eps = 1e-13
    costs = M.tolist()

    def clean(values):
        return tuple(0.0 if v <= eps else round(v, 15) for v in values)

    @lru_cache(maxsize=None)
    def best(rows, cols):
        active_rows = [i for i, r in enumerate(rows) if r > 0]
        active_cols = [j for j, c in enumerate(cols) if c > 0]
        if not active_rows or not active_cols:
            return 0.0
        value = np.inf
        for i in active_rows:
            for j in active_cols:
                t = min(rows[i], cols[j])
                r = list(rows)
                c = list(cols)
                r[i] -= t
                c[j] -= t
                value = min(value, costs[i][j] * t + best(clean(r), clean(c)))
        return value

    return float(best(clean(a), clean(b)))
