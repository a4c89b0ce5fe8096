#!/usr/bin/env python

import argparse
import logging
import logging.config
import sys

from baryio import ParseError
from baryfixed import ProximalStepError
from baryutils import CONFIG_FILE_PATH, LOGGING_CONFIG, RunConfig, get_yamlconfig
from exactot import InstanceTooLargeError
from experiments import RUNNERS
from sinkhorn import SinkhornConvergenceError, SinkhornUnderflowError

logger = logging.getLogger("barycenterLogger")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CAPABILITY = 2
EXIT_NUMERICAL = 3


def build_parser():
    parser = argparse.ArgumentParser(
        prog='barycenter', description='exact and smoothed optimal transport, Wasserstein barycenters')
    parser.add_argument('--config', default=CONFIG_FILE_PATH, help='YAML run defaults')

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument('inputs', nargs='*', help='CSV measures (x1..xd,weight) or PGM images')
    shared.add_argument('--lambda', dest='lambda', default=None, help="regularization strength or 'auto'")
    shared.add_argument('--p', type=float, default=None, help='exponent of the ground cost')
    shared.add_argument('--tol', type=float, default=None, help='sinkhorn marginal tolerance')
    shared.add_argument('--max-iter', dest='max_iter', type=int, default=None, help='sinkhorn iteration cap')
    shared.add_argument('--max-outer', dest='max_outer', type=int, default=None, help='outer iteration cap')
    shared.add_argument('--seed', type=int, default=None)
    shared.add_argument('--out', default=None, help='output directory')
    shared.add_argument('--constraint', default=None, help='simplex|uniform|entropy:<tau>')
    shared.add_argument('--log-domain', dest='log_domain', action='store_true', default=None,
                        help='log-domain sinkhorn updates')
    shared.add_argument('--concurrent', action='store_true', default=None,
                        help='solve the N transport subproblems in a thread pool')

    subparsers = parser.add_subparsers(dest='subcommand', required=True)
    emd = subparsers.add_parser('emd', parents=[shared], help='exact transport cost of two measures')
    emd.add_argument('--cost', default=None, help='header-less CSV cost matrix')
    sinkhorn = subparsers.add_parser('sinkhorn', parents=[shared], help='smoothed transport of two measures')
    sinkhorn.add_argument('--cost', default=None, help='header-less CSV cost matrix')

    fixed = subparsers.add_parser('bary-fixed', parents=[shared], help='fixed-support barycenter')
    fixed.add_argument('--support', default=None, help='CSV of the barycenter support')
    fixed.add_argument('--t0', type=float, default=None, help='initial step size')

    for name, helpmsg in (('bary-free', 'free-support barycenter'), ('cluster', 'free vs uniform centroids')):
        sub = subparsers.add_parser(name, parents=[shared], help=helpmsg)
        sub.add_argument('--k', type=int, default=None, help='number of atoms')
        sub.add_argument('--init', default=None, help="'random' or CSV of initial atoms")
        sub.add_argument('--step', type=float, default=None, help='preset Newton step, default line search')
        sub.add_argument('--t0', type=float, default=None, help='initial step size of the weight solver')
        if name == 'cluster':
            sub.add_argument('--points', type=int, default=None, help='synthetic points when no input is given')

    demo = subparsers.add_parser('ellipses-demo', parents=[shared], help='barycenter of nested ellipse images')
    demo.add_argument('--grid', type=int, default=None, help='image side in pixels')
    demo.add_argument('--count', type=int, default=None, help='number of images')
    demo.add_argument('--t0', type=float, default=None, help='initial step size')
    return parser


def main(argv=None):

    logging.config.dictConfig(get_yamlconfig(LOGGING_CONFIG))
    args = build_parser().parse_args(argv)
    configpath = args.config
    del args.config

    try:
        config = RunConfig.from_args(args, configpath)
        logger.info("running {}".format(config))
        RUNNERS[config.subcommand](config)
        return EXIT_OK
    except InstanceTooLargeError as e:
        logger.error(str(e))
        return EXIT_CAPABILITY
    except (SinkhornConvergenceError, SinkhornUnderflowError, ProximalStepError) as e:
        logger.error(str(e))
        return EXIT_NUMERICAL
    except ParseError as e:
        logger.error(str(e))
        return EXIT_INPUT
    except (ValueError, OSError) as e:
        logger.error("{}: {}".format(type(e).__name__, e))
        return EXIT_INPUT
    except Exception:
        logger.exception("Exception encountered")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
