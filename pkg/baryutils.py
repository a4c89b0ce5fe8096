#!/usr/bin/env python

import json
import math
import os
from os.path import abspath, dirname, join

import numpy as np
import yaml

CONFIG_FILE_PATH = join(dirname(abspath(__file__)), 'config/config.yml')
LOGGING_CONFIG = join(dirname(abspath(__file__)), 'config/configLogging.yml')

SIGNIFICANT_DIGITS = 12

# -----------------------------------------------------------------------------

def round_significant(obj, digits=SIGNIFICANT_DIGITS):
    """
    recursively round floats (and numpy scalars/arrays) found in ``obj`` to
    ``digits`` significant digits, so serialized outputs diff cleanly.

    :param obj: nested structure of dict/list/tuple/float/ndarray
    :param int digits: significant digits kept
    :returns: same structure with plain python floats
    """

    if isinstance(obj, dict):
        return {k: round_significant(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_significant(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return round_significant(obj.tolist(), digits)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return str(x)
        return float('{:.{}g}'.format(x, digits))
    return obj

# -----------------------------------------------------------------------------

def save_json(json_obj, filename):
    """
    save a json object to a formatted text file, floats written with 12
    significant digits.

    :param dict json_obj: the json object
    :param str filename: target path, ``.json`` appended when missing
    :returns: full filename

    :rtype: str
    """

    fn = filename if filename.endswith('.json') else "{}.json".format(filename)
    msg = json.dumps(
        round_significant(json_obj), sort_keys=True, indent=4, separators=(',', ': '))
    with open(fn, 'w') as f:
        f.write(msg)
    return fn

# -----------------------------------------------------------------------------

def get_yamlconfig(configPath):
    '''
    get a dict of config file (YAML) pointed by configPath.

    :param str configPath: path of config file
    :returns: dict of config

    :rtype: dict
    '''

    if not os.path.isfile(configPath):
        return {}

    with open(configPath) as f:
        try:
            return yaml.safe_load(f.read()) or {}
        except yaml.YAMLError:
            return {}

# -----------------------------------------------------------------------------

def parse_lambda(value):
    """
    parse a ``--lambda`` value: ``'auto'`` (or None) keeps the median
    heuristic, anything else must be a positive float.

    :param value: str, float or None
    :returns: None for auto, else float
    """

    if value is None or (isinstance(value, str) and value.strip().lower() == 'auto'):
        return None
    lam = float(value)
    if not lam > 0:
        raise ValueError("lambda must be positive or 'auto', got {}".format(value))
    return lam


class RunConfig:
    """
    run configuration of one CLI job: YAML defaults from ``config/config.yml``
    overridden by whatever was given on the command line.
    """

    SUBCOMMANDS = ('emd', 'sinkhorn', 'bary-fixed', 'bary-free', 'cluster', 'ellipses-demo')

    def __init__(self, subcommand, inputs=None, settings=None):
        if subcommand not in self.SUBCOMMANDS:
            raise ValueError("unknown subcommand {!r}".format(subcommand))
        self.subcommand_ = subcommand
        self.inputs_ = list(inputs or [])
        self.settings_ = dict(settings or {})
        self.lam_ = parse_lambda(self.settings_.get('lambda', 'auto'))
        if int(self.settings_.get('seed', 0)) < 0:
            raise ValueError("seed must be non-negative")

    def __repr__(self):
        return "<RunConfig {} inputs={}>".format(self.subcommand_, self.inputs_)

    @property
    def subcommand(self):
        return self.subcommand_

    @property
    def inputs(self):
        return self.inputs_

    @property
    def lam(self):
        """explicit lambda, or None when the median heuristic applies"""
        return self.lam_

    @property
    def out(self):
        return self.settings_.get('out', 'output')

    @property
    def seed(self):
        return int(self.settings_.get('seed', 0))

    def get(self, key, default=None):
        return self.settings_.get(key, default)

    def __getitem__(self, key):
        return self.settings_[key]

    @classmethod
    def from_args(cls, args, configpath=CONFIG_FILE_PATH):
        """
        build a :py:class:`RunConfig` from parsed argparse namespace; every
        option left as ``None`` falls back to the YAML section of the
        subcommand, then to the ``defaults`` section.

        :param argparse.Namespace args: parsed command line
        :param str configpath: path of YAML config
        :rtype: RunConfig
        """

        yamlconfig = get_yamlconfig(configpath)
        settings = {}
        settings.update(yamlconfig.get('defaults', {}))
        for section in ('sinkhorn', 'exact'):
            settings.update(yamlconfig.get(section, {}))
        section = {
            'bary-fixed': 'bary_fixed',
            'bary-free': 'bary_free',
            'cluster': 'cluster',
            'ellipses-demo': 'ellipses',
        }.get(args.subcommand)
        if section == 'cluster':
            settings.update(yamlconfig.get('bary_free', {}))
        if section == 'ellipses':
            settings.update(yamlconfig.get('bary_fixed', {}))
        if section:
            settings.update(yamlconfig.get(section, {}))

        for key, value in vars(args).items():
            if key in ('subcommand', 'inputs') or value is None:
                continue
            settings[key] = value

        return cls(args.subcommand, getattr(args, 'inputs', None), settings)
