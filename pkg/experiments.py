#!/usr/bin/env python
"""drivers of the CLI subcommands and the synthetic data generators they use.

Every ``run_*`` takes a :py:class:`baryutils.RunConfig`, writes its outputs
under ``config.out`` and returns the report dictionary it saved.
"""

import logging
import os
import time
from os.path import join

import numpy as np
import pandas as pd

import baryio
from baryfixed import (DEFAULT_MAX_HALVINGS, DEFAULT_MAX_OUTER, DEFAULT_OUTER_TOL, DEFAULT_T0, DEFAULT_WINDOW,
                       FixedBarycenterProblem, barycenter_fixed_support)
from baryfree import (DEFAULT_FREEZE_BELOW, DEFAULT_INNER_ITERATIONS, FreeBarycenterProblem,
                      barycenter_free_support)
from baryfree import DEFAULT_MAX_OUTER as FREE_MAX_OUTER
from baryfree import DEFAULT_OUTER_TOL as FREE_OUTER_TOL
from baryfree import DEFAULT_WINDOW as FREE_WINDOW
from exactot import MAX_EXACT_SIZE, InstanceTooLargeError, solve_exact_dual, solve_exact_primal
from measures import (CostMatrix, DiscreteMeasure, WeightConstraintSet, build_cost_matrix, grid_coordinates,
                      grid_measure_from_intensities)
from sinkhorn import DEFAULT_MAX_ITER, DEFAULT_TOL, LAMBDA_SCALE, median_lambda, smoothed_transport

logger = logging.getLogger("barycenterLogger")

# -----------------------------------------------------------------------------

def _inputs(config, count=None):
    inputs = config.inputs
    if count is not None and len(inputs) != count:
        raise ValueError("{} expects {} input files, got {}".format(config.subcommand, count, len(inputs)))
    if count is None and not inputs:
        raise ValueError("{} expects at least one input file".format(config.subcommand))
    return inputs


def _fresh(path):
    if os.path.exists(path):
        os.remove(path)
    return path


def _constraint(config):
    return WeightConstraintSet.parse(config.get('constraint') or 'simplex')


def _sinkhorn_options(config):
    return dict(
        sinkhorn_tol=float(config.get('tol', DEFAULT_TOL)),
        sinkhorn_max_iter=int(config.get('max_iter', DEFAULT_MAX_ITER)),
        log_domain=bool(config.get('log_domain', False)),
        doconcurrent=bool(config.get('concurrent', False)),
        lambda_scale=float(config.get('lambda_scale', LAMBDA_SCALE)),
    )


def fixed_options(config):
    """keyword arguments of :py:class:`FixedBarycenterProblem` from a run config"""
    options = _sinkhorn_options(config)
    options.update(
        t0=float(config.get('t0', DEFAULT_T0)),
        max_outer=int(config.get('max_outer', DEFAULT_MAX_OUTER)),
        tol=float(config.get('outer_tol', DEFAULT_OUTER_TOL)),
        window=int(config.get('window', DEFAULT_WINDOW)),
        max_halvings=int(config.get('max_halvings', DEFAULT_MAX_HALVINGS)),
    )
    return options


def free_options(config):
    """keyword arguments of :py:class:`FreeBarycenterProblem` from a run config"""
    options = _sinkhorn_options(config)
    step = config.get('step')
    options.update(
        t0=float(config.get('t0', DEFAULT_T0)),
        step=None if step is None else float(step),
        max_outer=int(config.get('max_outer', FREE_MAX_OUTER)),
        tol=float(config.get('outer_tol', FREE_OUTER_TOL)),
        window=int(config.get('window', FREE_WINDOW)),
        inner_iterations=int(config.get('inner_iterations', DEFAULT_INNER_ITERATIONS)),
        freeze_below=config.get('freeze_below', DEFAULT_FREEZE_BELOW),
    )
    return options

# -----------------------------------------------------------------------------

def read_cost_csv(path):
    """header-less CSV of a cost matrix"""
    try:
        df = pd.read_csv(path, header=None, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise baryio.ParseError("empty cost matrix file", path, 1) from None
    except pd.errors.ParserError as e:
        raise baryio.ParseError("malformed cost matrix ({})".format(str(e).strip()), path) from None
    values = df.apply(pd.to_numeric, errors='coerce').to_numpy(dtype=float)
    bad = ~np.isfinite(values).all(axis=1) | (values < 0).any(axis=1)
    if bad.any():
        raise baryio.ParseError("cost entries must be finite and nonnegative", path, int(np.flatnonzero(bad)[0]) + 1)
    return CostMatrix.precomputed(values)


def _pair_cost(config, mu, nu):
    if config.get('cost'):
        M = read_cost_csv(config['cost'])
        if M.shape != (mu.size, nu.size):
            raise ValueError("cost matrix is {}x{} but the measures have {} and {} atoms".format(
                *M.shape, mu.size, nu.size))
        return M
    return build_cost_matrix(mu.support, nu.support, float(config.get('p', 2.0)))


def run_emd(config):
    """
    exact transport cost between two measures.

    :returns: report with ``cost``, ``plan_nnz``, ``dual_gap``
    :raises InstanceTooLargeError: above the configured exact size limit
    """

    first, second = _inputs(config, 2)
    prune = not config.get('cost')
    mu = baryio.read_measure_csv(first, prune=prune)
    nu = baryio.read_measure_csv(second, prune=prune)
    max_size = int(config.get('max_size', MAX_EXACT_SIZE))
    if mu.size > max_size or nu.size > max_size:
        raise InstanceTooLargeError(
            "emd accepts at most {0}x{0} instances, got {1}x{2}; use the sinkhorn subcommand instead".format(
                max_size, mu.size, nu.size))
    M = _pair_cost(config, mu, nu)

    startTime = time.time()
    cost, plan = solve_exact_primal(mu.weights, nu.weights, M)
    dual = solve_exact_dual(mu.weights, nu.weights, M)
    report = {
        'cost': cost,
        'plan_nnz': plan.nnz,
        'dual_gap': abs(cost - dual.objective(mu.weights, nu.weights)),
        'dual_violation': max(dual.max_violation(M), 0.0),
        'n': mu.size,
        'm': nu.size,
        'p': M.power,
        'wall_s': time.time() - startTime,
    }
    os.makedirs(config.out, exist_ok=True)
    baryio.write_report(report, join(config.out, 'emd_report.json'))
    logger.info("emd: cost {:.12g}, dual gap {:.3e}".format(cost, report['dual_gap']))
    return report


def run_sinkhorn(config):
    """smoothed transport between two measures"""
    first, second = _inputs(config, 2)
    mu = baryio.read_measure_csv(first)
    nu = baryio.read_measure_csv(second)
    M = _pair_cost(config, mu, nu)
    lam = config.lam if config.lam is not None else median_lambda(M, float(config.get('lambda_scale', LAMBDA_SCALE)))

    startTime = time.time()
    solution = smoothed_transport(mu.weights, nu.weights, M, lam,
                                  tol=float(config.get('tol', DEFAULT_TOL)),
                                  max_iter=int(config.get('max_iter', DEFAULT_MAX_ITER)),
                                  log_domain=bool(config.get('log_domain', False)))
    row_err, col_err = solution.plan.marginal_errors()
    report = {
        'transport_cost': solution.transport_cost,
        'regularized_cost': solution.regularized_cost,
        'iterations': solution.iterations,
        'converged': solution.pair.converged,
        'lambda': lam,
        'marginal_error': max(row_err, col_err),
        'log_domain': bool(config.get('log_domain', False)),
        'wall_s': time.time() - startTime,
    }
    os.makedirs(config.out, exist_ok=True)
    baryio.write_report(report, join(config.out, 'sinkhorn_report.json'))
    logger.info("sinkhorn: cost {:.12g} after {} iterations".format(solution.transport_cost, solution.iterations))
    return report

# -----------------------------------------------------------------------------

def pooled_support(measures):
    """distinct atoms of all measures, in lexicographic order"""
    pooled = np.hstack([m.support for m in measures])
    return np.unique(pooled.T, axis=0).T


def image_barycenter(images, lam=None, theta=None, **options):
    """
    fixed-support barycenter of same-sized grayscale images on their common
    pixel grid.

    :returns: ``(barycenter image, trace, problem)``
    """

    images = [np.asarray(img, dtype=float) for img in images]
    if not images:
        raise ValueError("need at least one image")
    shape = images[0].shape
    for i, img in enumerate(images):
        if img.shape != shape:
            raise ValueError("image {} is {}x{}, expected {}x{}".format(i, *img.shape, *shape))
    measures = [grid_measure_from_intensities(img) for img in images]
    problem = FixedBarycenterProblem(grid_coordinates(*shape), measures, p=2.0, theta=theta, lam=lam, **options)
    a, trace = barycenter_fixed_support(problem)
    return a.reshape(shape), trace, problem


def mass_center(image):
    """intensity-weighted mean of the grid coordinates of an image"""
    img = np.asarray(image, dtype=float)
    X = grid_coordinates(*img.shape)
    w = img.ravel() / img.sum()
    return X @ w


def _write_fixed_outputs(config, prefix, X, a, trace, report):
    os.makedirs(config.out, exist_ok=True)
    baryio.write_points_csv(X, a, join(config.out, '{}_barycenter.csv'.format(prefix)))
    baryio.write_trace_jsonl(trace, _fresh(join(config.out, '{}_trace.jsonl'.format(prefix))))
    baryio.write_report(report, join(config.out, '{}_report.json'.format(prefix)))


def run_bary_fixed(config):
    """
    fixed-support barycenter of CSV measures (support from ``support`` or
    the pooled atoms) or of PGM images (pixel grid support).
    """

    inputs = _inputs(config)
    theta = _constraint(config)
    options = fixed_options(config)
    if all(path.lower().endswith('.pgm') for path in inputs):
        images = [baryio.read_pgm(path) for path in inputs]
        bary, trace, problem = image_barycenter(images, lam=config.lam, theta=theta, **options)
        os.makedirs(config.out, exist_ok=True)
        baryio.write_pgm(bary, join(config.out, 'bary_fixed_barycenter.pgm'))
    else:
        measures = [baryio.read_measure_csv(path) for path in inputs]
        if config.get('support'):
            X = baryio.read_measure_csv(config['support'], prune=False).support
        else:
            X = pooled_support(measures)
        problem = FixedBarycenterProblem(X, measures, p=float(config.get('p', 2.0)), theta=theta,
                                         lam=config.lam, **options)
        a, trace = barycenter_fixed_support(problem)
        bary = a

    a = np.asarray(bary).ravel()
    report = {
        'objective': float(trace.objectives.min()),
        'initial_objective': trace[0]['objective'],
        'iterations': trace.iterations,
        'lambda': problem.lam,
        'constraint': repr(theta),
        'n': problem.size,
        'N': len(problem.measures),
    }
    _write_fixed_outputs(config, 'bary_fixed', problem.X, a, trace, report)
    return report


def _free_problem(config, measures, theta, init=None):
    options = free_options(config)
    k = int(config.get('k', 1))
    if init is None:
        init = config.get('init') or 'random'
        if init != 'random':
            init = baryio.read_measure_csv(init, prune=False).support
    return FreeBarycenterProblem(measures, k, theta=theta, lam=config.lam, init=init, seed=config.seed, **options)


def run_bary_free(config):
    """free-support barycenter of CSV measures"""
    measures = [baryio.read_measure_csv(path) for path in _inputs(config)]
    theta = _constraint(config)
    problem = _free_problem(config, measures, theta)
    X, a, trace = barycenter_free_support(problem)
    report = {
        'objective': float(trace.objectives.min()),
        'initial_objective': trace[0]['objective'],
        'iterations': trace.iterations,
        'lambda': problem.lam,
        'constraint': repr(theta),
        'k': problem.k,
        'N': len(measures),
    }
    _write_fixed_outputs(config, 'bary_free', X, a, trace, report)
    return report

# -----------------------------------------------------------------------------

def make_cluster_data(points=200, components=5, seed=0):
    """
    synthetic weighted point cloud in ``[0,1]^2``: a mixture of anisotropic
    gaussians, Pareto distributed weights.

    :rtype: DiscreteMeasure
    """

    if points < 1 or components < 1:
        raise ValueError("need at least one point and one component")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.15, 0.85, size=(components, 2))
    shares = rng.dirichlet(np.full(components, 2.0))
    labels = rng.choice(components, size=points, p=shares)
    Y = np.empty((2, points))
    for c in range(components):
        idx = np.flatnonzero(labels == c)
        scales = np.array([rng.uniform(0.03, 0.09), rng.uniform(0.008, 0.03)])
        angle = rng.uniform(0.0, np.pi)
        R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        Y[:, idx] = centers[c][:, None] + R @ (scales[:, None] * rng.standard_normal((2, idx.size)))
    np.clip(Y, 0.0, 1.0, out=Y)
    weights = rng.pareto(1.5, size=points) + 1.0
    return DiscreteMeasure(Y, weights)


def compare_constrained_clustering(measure, k, seed=0, lam=None, **options):
    """
    free (full simplex) and uniform centroids of one weighted point cloud
    from the same initial atoms.

    The uniform solution is feasible for the free problem; when the free run
    ends above it, a second free run starts from the uniform atoms
    (``restarted``), and if that one still ends above, the uniform solution is
    reported as the free one (``fallback``). ``run_objective`` keeps the best
    objective the free runs reached on their own.

    :returns: dict with ``free`` and ``uniform`` entries ``(X, a, objective,
        iterations, wall_s)``
    """

    results = {}
    init = None
    for name, theta in (('uniform', WeightConstraintSet.uniform()), ('free', WeightConstraintSet.full_simplex())):
        startTime = time.time()
        problem = FreeBarycenterProblem([measure], k, theta=theta, lam=lam, init=init, seed=seed, **options)
        init, lam = problem.init, problem.lam
        X, a, trace = barycenter_free_support(problem)
        results[name] = {'X': X, 'a': a, 'objective': float(trace.objectives.min()),
                         'iterations': trace.iterations, 'wall_s': time.time() - startTime, 'lambda': lam}

    free, uniform = results['free'], results['uniform']
    free.update(restarted=False, fallback=False)
    if free['objective'] > uniform['objective']:
        logger.info("cluster: free run ended above the uniform one ({:.10g} > {:.10g}), restarting from it".format(
            free['objective'], uniform['objective']))
        startTime = time.time()
        problem = FreeBarycenterProblem([measure], k, lam=lam, init=uniform['X'], seed=seed, **options)
        X, a, trace = barycenter_free_support(problem)
        free['iterations'] += trace.iterations
        free['wall_s'] += time.time() - startTime
        free['restarted'] = True
        if trace.objectives.min() < free['objective']:
            free.update(X=X, a=a, objective=float(trace.objectives.min()))
    free['run_objective'] = free['objective']
    if free['objective'] > uniform['objective']:
        logger.warning("cluster: free runs ended above the uniform objective, reporting the uniform centroids")
        free.update(X=uniform['X'].copy(), a=uniform['a'].copy(), objective=uniform['objective'], fallback=True)
    return results


def run_cluster(config):
    """free versus uniform centroids on a CSV point cloud or synthetic data"""
    if config.inputs:
        measure = baryio.read_measure_csv(_inputs(config, 1)[0])
    else:
        measure = make_cluster_data(int(config.get('points', 200)), int(config.get('components', 5)), config.seed)
    k = int(config.get('k', 8))
    options = free_options(config)
    results = compare_constrained_clustering(measure, k, seed=config.seed, lam=config.lam, **options)
    free, uniform = results['free'], results['uniform']
    report = {
        'k': k,
        'points': measure.size,
        'lambda': free['lambda'],
        'free_objective': free['objective'],
        'uniform_objective': uniform['objective'],
        'free_iterations': free['iterations'],
        'uniform_iterations': uniform['iterations'],
        'free_wall_s': free['wall_s'],
        'uniform_wall_s': uniform['wall_s'],
        'free_run_objective': free['run_objective'],
        'free_restarted': free['restarted'],
        'free_fallback': free['fallback'],
        'uniform_ge_free': bool(uniform['objective'] >= free['objective']),
    }
    os.makedirs(config.out, exist_ok=True)
    baryio.write_points_csv(free['X'], free['a'], join(config.out, 'cluster_free_centroids.csv'))
    baryio.write_points_csv(uniform['X'], uniform['a'], join(config.out, 'cluster_uniform_centroids.csv'))
    baryio.write_report(report, join(config.out, 'cluster_report.json'))
    logger.info("cluster: free {:.10g}, uniform {:.10g}".format(free['objective'], uniform['objective']))
    return report

# -----------------------------------------------------------------------------

def make_nested_ellipses(count=10, grid=20, seed=0):
    """
    ``count`` images of two nested random elliptic bands on a ``grid x grid``
    pixel grid over ``[0,1]^2``.

    :rtype: list(numpy.ndarray)
    """

    if count < 1 or grid < 2:
        raise ValueError("need count >= 1 and grid >= 2")
    rng = np.random.default_rng(seed)
    X = grid_coordinates(grid, grid)
    images = []
    for _ in range(count):
        center = 0.5 + rng.uniform(-0.05, 0.05, size=2)
        outer = rng.uniform(0.3, 0.4, size=2)
        inner = outer * rng.uniform(0.45, 0.55, size=2)
        angle = rng.uniform(0.0, np.pi)
        R = np.array([[np.cos(angle), np.sin(angle)], [-np.sin(angle), np.cos(angle)]])
        local = R @ (X - center[:, None])
        rho_outer = np.sqrt(np.sum((local / outer[:, None]) ** 2, axis=0))
        rho_inner = np.sqrt(np.sum((local / inner[:, None]) ** 2, axis=0))
        band = (np.abs(rho_outer - 1.0) < 0.12) | (np.abs(rho_inner - 1.0) < 0.2)
        if not band.any():
            band[np.argmin(np.abs(rho_outer - 1.0))] = True
        images.append(band.reshape(grid, grid).astype(float))
    return images


def run_ellipses_demo(config):
    """barycenter of seeded nested-ellipse images, written as PGM"""
    grid = int(config.get('grid', 20))
    count = int(config.get('count', 10))
    images = make_nested_ellipses(count, grid, config.seed)
    options = fixed_options(config)
    bary, trace, problem = image_barycenter(images, lam=config.lam, theta=_constraint(config), **options)

    os.makedirs(config.out, exist_ok=True)
    for i, img in enumerate(images):
        baryio.write_pgm(img, join(config.out, 'ellipse_{:02d}.pgm'.format(i)))
    baryio.write_pgm(bary, join(config.out, 'ellipses_barycenter.pgm'))
    report = {
        'grid': grid,
        'count': count,
        'seed': config.seed,
        'objective': float(trace.objectives.min()),
        'initial_objective': trace[0]['objective'],
        'iterations': trace.iterations,
        'lambda': problem.lam,
    }
    _write_fixed_outputs(config, 'ellipses', problem.X, bary.ravel(), trace, report)
    return report


RUNNERS = {
    'emd': run_emd,
    'sinkhorn': run_sinkhorn,
    'bary-fixed': run_bary_fixed,
    'bary-free': run_bary_free,
    'cluster': run_cluster,
    'ellipses-demo': run_ellipses_demo,
}
