#!/usr/bin/env python
"""load/save of point-cloud measures (CSV), grayscale images (PGM), run
traces (JSON lines) and run reports (JSON).
"""

import json
import logging
import re

import imageio.v2 as imageio

import numpy as np
import pandas as pd

from baryutils import SIGNIFICANT_DIGITS, round_significant, save_json
from measures import DiscreteMeasure, as_points

logger = logging.getLogger("barycenterLogger")

FLOAT_FORMAT = '%.{}g'.format(SIGNIFICANT_DIGITS)
PGM_MAGIC = (b'P2', b'P5')
TRACE_KEYS = ('iter', 'objective', 'wall_ms', 'inner_iters')


class ParseError(ValueError):
    """malformed input file; carries the path and the 1-based line"""

    def __init__(self, msg, path=None, line=None):
        self.path = path
        self.line = line
        where = path or '<input>'
        if line is not None:
            where = "{}:{}".format(where, line)
        super().__init__("{}: {}".format(where, msg))

# -----------------------------------------------------------------------------

def _expected_header(d):
    return ['x{}'.format(i + 1) for i in range(d)] + ['weight']


def read_measure_csv(path, prune=True):
    """
    read a weighted point cloud with header ``x1,...,xd,weight``.

    :param str path: CSV file
    :param bool prune: drop zero-weight rows, default True
    :returns: measure with normalized weights
    :rtype: DiscreteMeasure
    :raises ParseError: on malformed content, with the offending line
    """

    try:
        df = pd.read_csv(path, skipinitialspace=True, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise ParseError("empty file, expected header x1..xd,weight", path, 1) from None
    except pd.errors.ParserError as e:
        m = re.search(r'line (\d+)', str(e))
        raise ParseError("malformed row ({})".format(str(e).strip()), path,
                         int(m.group(1)) if m else None) from None

    columns = [c.strip() for c in df.columns]
    d = len(columns) - 1
    if d < 1 or columns != _expected_header(d):
        raise ParseError("header must be x1..xd,weight, got {}".format(','.join(columns)), path, 1)
    if df.empty:
        raise ParseError("no data rows", path, 2)

    values = df.apply(lambda col: pd.to_numeric(col.str.strip(), errors='coerce'))
    bad = ~np.isfinite(values.to_numpy(dtype=float)).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ParseError("non-numeric or non-finite value", path, row + 2)
    arr = values.to_numpy(dtype=float)
    weights = arr[:, -1]
    if np.any(weights < 0):
        row = int(np.flatnonzero(weights < 0)[0])
        raise ParseError("negative weight {}".format(weights[row]), path, row + 2)
    if not np.any(weights > 0):
        raise ParseError("all weights are zero", path)

    measure = DiscreteMeasure(arr[:, :-1].T, weights)
    logger.debug("read {} atoms in R^{} from {}".format(measure.size, measure.dim, path))
    return measure.pruned() if prune else measure


def write_points_csv(points, weights, path):
    """write ``d x n`` points and their weights with 12 significant digits"""
    points = as_points(points)
    weights = np.asarray(weights, dtype=float).ravel()
    if weights.size != points.shape[1]:
        raise ValueError("{} weights for {} points".format(weights.size, points.shape[1]))
    df = pd.DataFrame(points.T, columns=_expected_header(points.shape[0])[:-1])
    df['weight'] = weights
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_measure_csv(measure, path):
    return write_points_csv(measure.support, measure.weights, path)

# -----------------------------------------------------------------------------

def read_pgm(path):
    """
    read a binary (P5) or ASCII (P2) graymap, 8 or 16 bit.

    Decoding goes through imageio, whose PNM reader rescales the samples to
    the full range of the pixel type, so dividing by that range divides by
    the file's maxval.

    :param str path: PGM file
    :returns: ``h x w`` intensities in ``[0, 1]``
    :rtype: numpy.ndarray
    :raises ParseError: on malformed content
    """

    with open(path, 'rb') as f:
        magic = f.read(2)
    if magic not in PGM_MAGIC:
        raise ParseError("not a PGM file (magic {!r})".format(magic), path, 1)
    try:
        pixels = np.asarray(imageio.imread(path))
    except Exception as e:
        raise ParseError("unreadable graymap ({})".format(e), path) from None
    if pixels.ndim != 2 or pixels.size == 0:
        raise ParseError("expected a 2-d graymap, got shape {}".format(pixels.shape), path)
    full = 255.0 if pixels.dtype == np.uint8 else 65535.0
    return pixels.astype(float) / full


def write_pgm(image, path, normalize=True):
    """
    write an 8-bit binary graymap.

    :param image: ``h x w`` nonnegative intensities
    :param bool normalize: scale so the maximum maps to 255; otherwise the
        intensities are taken in ``[0, 1]``
    """

    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("image must be 2-d, got shape {}".format(img.shape))
    if normalize:
        peak = img.max()
        img = img / peak if peak > 0 else img
    pixels = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    imageio.imwrite(path, pixels)
    return path

# -----------------------------------------------------------------------------

def write_trace_jsonl(trace, path):
    """
    append the records of a trace to a JSON-lines file, one object per
    iteration, floats with 12 significant digits.
    """

    with open(path, 'a') as f:
        for record in trace:
            f.write(json.dumps(round_significant(record), sort_keys=True))
            f.write('\n')
    return path


def read_trace_jsonl(path):
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError("bad trace record: {}".format(e.msg), path, lineno) from None
            missing = [k for k in TRACE_KEYS if not isinstance(record, dict) or k not in record]
            if missing:
                raise ParseError("trace record lacks {}".format(', '.join(missing)), path, lineno)
            records.append(record)
    return records


def write_report(report, path):
    """JSON report, floats with 12 significant digits"""
    return save_json(report, path)

