#!/usr/bin/env python

import json
import time
from os.path import exists, join

import numpy as np
import pandas as pd
import pytest

from baryutils import CONFIG_FILE_PATH, RunConfig, parse_lambda
from experiments import (compare_constrained_clustering, image_barycenter, make_cluster_data, make_nested_ellipses,
                         mass_center, run_cluster, run_ellipses_demo, run_emd, run_sinkhorn)
from main import EXIT_CAPABILITY, EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK, build_parser, main


def write_csv(path, rows, header='x1,weight'):
    with open(path, 'w') as f:
        f.write(header + '\n')
        for row in rows:
            f.write(','.join(str(v) for v in row) + '\n')
    return str(path)


def test_emd_of_identical_files_is_zero(tmp_path):
    path = write_csv(tmp_path / 'm.csv', [(0.0, 0.0, 1), (1.0, 0.5, 2), (3.0, 1.0, 1)], header='x1,x2,weight')
    report = run_emd(RunConfig('emd', [path, path], {'out': str(tmp_path / 'out')}))
    assert report['cost'] == pytest.approx(0.0, abs=1e-12)
    assert report['dual_gap'] <= 1e-8
    assert exists(join(str(tmp_path / 'out'), 'emd_report.json'))


def test_emd_with_a_cost_file(tmp_path):
    first = write_csv(tmp_path / 'a.csv', [(0, 0.3), (1, 0.7)])
    second = write_csv(tmp_path / 'b.csv', [(0, 0.6), (1, 0.4)])
    cost = tmp_path / 'cost.csv'
    cost.write_text("0,2\n1,4\n")
    report = run_emd(RunConfig('emd', [first, second], {'out': str(tmp_path), 'cost': str(cost)}))
    assert report['cost'] == pytest.approx(1.6, abs=1e-12)
    assert report['plan_nnz'] == 3


def test_sinkhorn_report(tmp_path):
    first = write_csv(tmp_path / 'a.csv', [(0, 1), (1, 1)])
    second = write_csv(tmp_path / 'b.csv', [(0.5, 1), (2, 3)])
    report = run_sinkhorn(RunConfig('sinkhorn', [first, second], {'out': str(tmp_path), 'lambda': 5}))
    assert report['converged']
    assert report['lambda'] == 5.0
    assert report['marginal_error'] <= 1e-6


def test_main_exit_codes(tmp_path):
    out = str(tmp_path / 'out')
    good = write_csv(tmp_path / 'good.csv', [(0, 1), (1, 1)])
    bad = write_csv(tmp_path / 'bad.csv', [(0, 1), ('x', 1)])
    big = write_csv(tmp_path / 'big.csv', [(i, 1) for i in range(501)])

    assert main(['emd', good, good, '--out', out]) == EXIT_OK
    assert main(['emd', bad, good, '--out', out]) == EXIT_INPUT
    assert main(['emd', big, big, '--out', out]) == EXIT_CAPABILITY
    assert main(['emd', str(tmp_path / 'missing.csv'), good, '--out', out]) == EXIT_INPUT
    assert main(['sinkhorn', good, big, '--out', out, '--tol', '1e-15', '--max-iter', '1']) == EXIT_NUMERICAL
    assert main(['sinkhorn', good, good, '--out', out, '--lambda', '-2']) == EXIT_INPUT


def test_run_config_merges_yaml_and_flags():
    parser = build_parser()

    args = parser.parse_args(['cluster'])
    del args.config
    config = RunConfig.from_args(args, CONFIG_FILE_PATH)
    assert config.get('k') == 8 and config.get('points') == 200
    assert config.get('max_outer') == 100 and config.get('window') == 3
    assert config.get('tol') == 1e-6 and config.lam is None

    args = parser.parse_args(['ellipses-demo', '--max-outer', '7', '--lambda', '3'])
    del args.config
    config = RunConfig.from_args(args, CONFIG_FILE_PATH)
    assert config.get('max_outer') == 7 and config.get('window') == 5 and config.get('grid') == 20
    assert config.lam == 3.0

    assert parse_lambda('auto') is None
    with pytest.raises(ValueError):
        parse_lambda('0')


def test_cluster_fixture(tmp_path):
    path = write_csv(tmp_path / 'points.csv', [(0, 1), (1, 1), (5, 1), (6, 1)])
    out = str(tmp_path / 'out')
    report = run_cluster(RunConfig('cluster', [path], {'out': out, 'k': 2, 'max_outer': 20, 'inner_iterations': 20}))
    assert report['uniform_ge_free']
    assert report['free_run_objective'] <= report['uniform_objective'] + 1e-5
    free = pd.read_csv(join(out, 'cluster_free_centroids.csv'))
    uniform = pd.read_csv(join(out, 'cluster_uniform_centroids.csv'))
    np.testing.assert_allclose(np.sort(free['x1']), [0.5, 5.5], atol=1e-3)
    np.testing.assert_allclose(np.sort(uniform['x1']), [0.5, 5.5], atol=1e-3)
    np.testing.assert_allclose(uniform['weight'], [0.5, 0.5])


def test_uniform_objective_dominates_free():
    for seed in range(5):
        measure = make_cluster_data(200, 5, seed)
        results = compare_constrained_clustering(measure, 8, seed=seed, max_outer=5, inner_iterations=5)
        free, uniform = results['free'], results['uniform']
        # a restart from the uniform atoms evaluates the uniform solution first
        assert free['run_objective'] <= uniform['objective'] + 1e-5
        assert free['objective'] <= free['run_objective']
        assert free['fallback'] == (free['run_objective'] > uniform['objective'])
        if not free['restarted']:
            assert not free['fallback']
        np.testing.assert_array_equal(results['uniform']['a'], np.full(8, 1.0 / 8))
        assert np.all(np.isfinite(results['free']['X']))


def test_cluster_data_is_seeded():
    first, second = make_cluster_data(50, 3, seed=9), make_cluster_data(50, 3, seed=9)
    np.testing.assert_array_equal(first.support, second.support)
    assert first.size == 50 and np.all((first.support >= 0) & (first.support <= 1))


def test_translated_squares_meet_in_the_middle():
    left = np.zeros((12, 12))
    right = np.zeros((12, 12))
    left[5:7, 2:4] = 1.0
    right[5:7, 8:10] = 1.0
    bary, trace, problem = image_barycenter([left, right], max_outer=100)
    np.testing.assert_allclose(mass_center(bary), [5.5 / 11, 5.5 / 11], atol=1e-2)


def test_single_image_barycenter_is_the_image():
    image = make_nested_ellipses(1, 10, seed=0)[0]
    bary, trace, problem = image_barycenter([image], lambda_scale=200.0)
    assert np.abs(bary - image / image.sum()).sum() <= 0.1


def test_ellipses_demo(tmp_path):
    startTime = time.time()
    reports = []
    for run in ('first', 'second'):
        out = str(tmp_path / run)
        settings = {'out': out, 'grid': 20, 'count': 10, 'max_outer': 60, 'seed': 0}
        reports.append(run_ellipses_demo(RunConfig('ellipses-demo', settings=settings)))
        assert exists(join(out, 'ellipses_barycenter.pgm')) and exists(join(out, 'ellipse_09.pgm'))
    assert reports[0]['objective'] <= 0.5 * reports[0]['initial_objective']
    assert reports[0]['objective'] == reports[1]['objective']
    with open(join(str(tmp_path / 'first'), 'ellipses_barycenter.pgm'), 'rb') as f:
        first = f.read()
    with open(join(str(tmp_path / 'second'), 'ellipses_barycenter.pgm'), 'rb') as f:
        assert f.read() == first
    with open(join(str(tmp_path / 'first'), 'ellipses_trace.jsonl')) as f:
        records = [json.loads(line) for line in f]
    assert [r['iter'] for r in records] == list(range(1, len(records) + 1))
    assert time.time() - startTime < 600
