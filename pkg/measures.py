#!/usr/bin/env python
"""empirical measures, simplex weights, constraint sets on weights and
ground-cost matrices between point clouds.

Point clouds are stored column-major, ``d x n``: column ``i`` is atom ``i``.
"""

import logging

import numpy as np
from scipy.spatial.distance import cdist

logger = logging.getLogger("barycenterLogger")

SIMPLEX_TOL = 1e-12

# -----------------------------------------------------------------------------

def as_points(points):
    """
    coerce a point list to a float ``d x n`` array; a 1-d input is read as
    ``n`` points on the real line.

    :param points: array-like
    :returns: 2-d array
    :rtype: numpy.ndarray
    """

    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError("points must be a d x n array, got shape {}".format(arr.shape))
    return arr

# -----------------------------------------------------------------------------

def normalize_measure(raw):
    """
    scale a nonnegative vector onto the probability simplex.

    :param raw: nonnegative weights, at least one strictly positive
    :returns: weights summing to one
    :rtype: numpy.ndarray
    """

    w = np.asarray(raw, dtype=float).ravel()
    if w.size == 0:
        raise ValueError("cannot normalize an empty weight vector")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative, got min {}".format(w.min()))
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must have at least one positive entry")
    return w / total


def entropy(a):
    """Shannon entropy of a simplex vector, with 0 log 0 = 0."""
    a = np.asarray(a, dtype=float)
    pos = a[a > 0]
    return float(-np.sum(pos * np.log(pos)))

# -----------------------------------------------------------------------------

class DiscreteMeasure:
    """
    finitely supported probability measure ``sum_i w_i delta_{x_i}``.

    Support and weights are copied and frozen at construction; weights are
    renormalized to sum to one.
    """

    def __init__(self, support, weights):
        support_ = as_points(support).copy()
        weights_ = normalize_measure(weights)
        if support_.shape[1] != weights_.size:
            raise ValueError("support has {} atoms but {} weights were given".format(
                support_.shape[1], weights_.size))
        support_.setflags(write=False)
        weights_.setflags(write=False)
        self.support_ = support_
        self.weights_ = weights_

    def __repr__(self):
        return "<DiscreteMeasure d={} n={}>".format(self.dim, self.size)

    def __len__(self):
        return self.size

    @property
    def support(self):
        return self.support_

    @property
    def weights(self):
        return self.weights_

    @property
    def dim(self):
        return self.support_.shape[0]

    @property
    def size(self):
        return self.support_.shape[1]

    def pruned(self):
        """copy without zero-weight atoms"""
        keep = self.weights_ > 0
        if keep.all():
            return self
        return DiscreteMeasure(self.support_[:, keep], self.weights_[keep])


def uniform_measure(points):
    points = as_points(points)
    return DiscreteMeasure(points, np.ones(points.shape[1]))

# -----------------------------------------------------------------------------

class CostMatrix:
    """
    pairwise ground costs ``||x_i - y_j||^p`` (or a user-supplied matrix,
    tagged ``precomputed``).
    """

    METRICS = ('euclidean', 'squared-euclidean', 'precomputed')

    def __init__(self, entries, power=1.0, metric='precomputed'):
        entries_ = np.array(entries, dtype=float, ndmin=2)
        if entries_.ndim != 2:
            raise ValueError("cost matrix must be 2-d")
        if metric not in self.METRICS:
            raise ValueError("unknown metric tag {!r}".format(metric))
        if not np.all(np.isfinite(entries_)) or np.any(entries_ < 0):
            raise ValueError("cost entries must be finite and nonnegative")
        entries_.setflags(write=False)
        self.entries_ = entries_
        self.power_ = float(power)
        self.metric_ = metric

    def __repr__(self):
        return "<CostMatrix {}x{} {} p={}>".format(*self.shape, self.metric_, self.power_)

    def __array__(self, dtype=None, copy=None):
        return self.entries_ if dtype is None else self.entries_.astype(dtype)

    @property
    def entries(self):
        return self.entries_

    @property
    def power(self):
        return self.power_

    @property
    def metric(self):
        return self.metric_

    @property
    def shape(self):
        return self.entries_.shape

    def median_positive(self):
        """lower median of the strictly positive entries"""
        pos = np.sort(self.entries_[self.entries_ > 0], axis=None)
        if pos.size == 0:
            raise ValueError("cost matrix has no positive entry")
        return float(pos[(pos.size - 1) // 2])

    @classmethod
    def precomputed(cls, entries):
        return cls(entries, power=1.0, metric='precomputed')


def as_cost_array(M):
    """plain float array view of a :py:class:`CostMatrix` or array-like"""
    if isinstance(M, CostMatrix):
        return M.entries
    arr = np.array(M, dtype=float, ndmin=2)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("cost entries must be finite and nonnegative")
    return arr

# -----------------------------------------------------------------------------

def build_cost_matrix(X, Y, p=2.0):
    """
    pairwise distances between the columns of ``X`` and ``Y`` raised to the
    power ``p``.

    For ``p == 2`` the squared distances come from the Gram decomposition
    ``x 1^T + 1 y^T - 2 X^T Y`` (``x = diag(X^T X)``) with negative round-off
    clamped to zero; any other exponent goes through ``cdist``.

    :param X: ``d x n`` points
    :param Y: ``d x m`` points
    :param float p: exponent, ``p >= 1``
    :returns: ``n x m`` cost matrix
    :rtype: CostMatrix
    """

    X = as_points(X)
    Y = as_points(Y)
    if X.shape[1] == 0 or Y.shape[1] == 0:
        raise ValueError("point lists must be nonempty")
    if X.shape[0] != Y.shape[0]:
        raise ValueError("dimension mismatch: X is in R^{} but Y is in R^{}".format(
            X.shape[0], Y.shape[0]))
    p = float(p)
    if not p >= 1:
        raise ValueError("exponent p must be >= 1, got {}".format(p))

    if p == 2.0:
        x = np.sum(X * X, axis=0)
        y = np.sum(Y * Y, axis=0)
        entries = x[:, None] + y[None, :] - 2.0 * (X.T @ Y)
        np.maximum(entries, 0.0, out=entries)
        if X is Y or (X.shape == Y.shape and np.array_equal(X, Y)):
            entries = 0.5 * (entries + entries.T)
            np.fill_diagonal(entries, 0.0)
        return CostMatrix(entries, power=2.0, metric='squared-euclidean')

    entries = cdist(X.T, Y.T, metric='euclidean')
    if p != 1.0:
        entries = entries ** p
    return CostMatrix(entries, power=p, metric='euclidean')

# -----------------------------------------------------------------------------

def grid_coordinates(h, w):
    """
    ``2 x (h*w)`` coordinates of a pixel grid embedded in ``[0,1]^2``, row
    major: pixel ``(i, j)`` sits at ``(i/(h-1), j/(w-1))`` (0 on a unit axis).
    """

    rows = np.arange(h, dtype=float) / (h - 1) if h > 1 else np.zeros(1)
    cols = np.arange(w, dtype=float) / (w - 1) if w > 1 else np.zeros(1)
    ii, jj = np.meshgrid(rows, cols, indexing='ij')
    return np.vstack([ii.ravel(), jj.ravel()])


def grid_measure_from_intensities(image, prune=True):
    """
    read a grayscale image as a discrete measure on ``[0,1]^2``.

    :param image: ``h x w`` nonnegative intensities
    :param bool prune: drop zero-intensity pixels, default True
    :returns: measure with normalized intensities as weights
    :rtype: DiscreteMeasure
    """

    img = np.asarray(image, dtype=float)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be a nonempty 2-d array, got shape {}".format(img.shape))
    if np.any(img < 0):
        raise ValueError("image intensities must be nonnegative")
    if not np.any(img > 0):
        raise ValueError("image has no positive pixel")

    measure = DiscreteMeasure(grid_coordinates(*img.shape), img.ravel())
    logger.debug("image {}x{} with {} positive pixels".format(img.shape[0], img.shape[1], np.count_nonzero(img)))
    return measure.pruned() if prune else measure

# -----------------------------------------------------------------------------

class WeightConstraintSet:
    """
    closed convex subset Theta of the simplex the barycenter weights live in:

    - ``simplex``: the full simplex
    - ``uniform``: the singleton ``{1_n/n}``
    - ``entropy``: the entropy level set ``{a : H(a) >= tau}``
    """

    KINDS = ('simplex', 'uniform', 'entropy')

    def __init__(self, kind='simplex', tau=None):
        if kind not in self.KINDS:
            raise ValueError("unknown constraint kind {!r}".format(kind))
        if kind == 'entropy':
            if tau is None or not tau >= 0:
                raise ValueError("entropy level set needs tau >= 0, got {}".format(tau))
            tau = float(tau)
        else:
            tau = None
        self.kind_ = kind
        self.tau_ = tau

    def __repr__(self):
        if self.kind_ == 'entropy':
            return "<WeightConstraintSet entropy:{}>".format(self.tau_)
        return "<WeightConstraintSet {}>".format(self.kind_)

    def __eq__(self, other):
        return (isinstance(other, WeightConstraintSet)
                and (self.kind_, self.tau_) == (other.kind_, other.tau_))

    def __hash__(self):
        return hash((self.kind_, self.tau_))

    @property
    def kind(self):
        return self.kind_

    @property
    def tau(self):
        return self.tau_

    @classmethod
    def full_simplex(cls):
        return cls('simplex')

    @classmethod
    def uniform(cls):
        return cls('uniform')

    @classmethod
    def entropy_level_set(cls, tau):
        return cls('entropy', tau)

    @classmethod
    def parse(cls, spec):
        """parse ``simplex``, ``uniform`` or ``entropy:<tau>``"""
        text = str(spec).strip().lower()
        if text in ('simplex', 'uniform'):
            return cls(text)
        if text.startswith('entropy:'):
            try:
                tau = float(text.split(':', 1)[1])
            except ValueError:
                raise ValueError("bad entropy level {!r}".format(spec)) from None
            return cls('entropy', tau)
        raise ValueError("constraint must be simplex|uniform|entropy:<tau>, got {!r}".format(spec))

    def validate(self, n):
        """check the set is nonempty in dimension ``n``"""
        if self.kind_ == 'entropy' and self.tau_ > np.log(n) + SIMPLEX_TOL:
            raise ValueError("entropy level {} exceeds log(n) = {}".format(self.tau_, np.log(n)))

    def initial_point(self, n):
        """minimizer of the negative entropy over the set: ``1_n/n`` for every kind"""
        self.validate(n)
        return np.full(n, 1.0 / n)

    def contains(self, a, atol=1e-10):
        a = np.asarray(a, dtype=float)
        if np.any(a < 0) or abs(a.sum() - 1.0) > atol:
            return False
        if self.kind_ == 'uniform':
            return bool(np.all(a == 1.0 / a.size))
        if self.kind_ == 'entropy':
            return entropy(a) >= self.tau_ - atol
        return True
