"""Generates synthetic change-point and linear-Gaussian datasets.

Files are one-column CSVs. The first line is '#' followed by the JSON
generation manifest, the second the column header.
"""
import json
import os

import numpy as np

from args import SynthArgParser
from kernels.ssm import LinearGaussianSsm
from util import ConfigError, RandomStreams, format_cell, read_series_csv


COLUMNS = {'changepoint': 'event_time', 'lgssm': 'y'}
FILE_NAMES = {'changepoint': 'events.csv', 'lgssm': 'observations.csv'}


def changepoint_events(length, changepoints, heights, rng):
    """Sorted event times of a piecewise-constant Poisson process on [0, length]."""
    bounds = np.concatenate([[0.0], np.asarray(changepoints, dtype=float), [float(length)]])
    if len(heights) != bounds.size - 1:
        raise ValueError('{} segments need {} heights, got {}.'.format(bounds.size - 1, bounds.size - 1, len(heights)))
    events = []
    for lo, hi, h in zip(bounds[:-1], bounds[1:], heights):
        count = rng.poisson(h * (hi - lo))
        events.append(rng.uniform(lo, hi, size=count))
    return np.sort(np.concatenate(events))


def lgssm_observations(T, theta, rng, a=1.0, phi=0.95, sigma_z2=1.0, sigma_y2=0.1):
    if T == 0:
        return np.zeros(0)
    model = LinearGaussianSsm.simulate(theta, T, rng, a=a, phi=phi, sigma_z2=sigma_z2, sigma_y2=sigma_y2)
    return model.y


def write_dataset(path, column, values, manifest):
    with open(path, 'w') as f:
        f.write('#' + json.dumps(manifest, sort_keys=True) + '\n')
        f.write(column + '\n')
        for value in values:
            f.write(format_cell(float(value)) + '\n')


def read_dataset(path):
    """Returns (values, manifest); the manifest is empty for files without one."""
    values = read_series_csv(path)
    manifest = {}
    with open(path) as f:
        first = f.readline().strip()
    if first.startswith('#'):
        try:
            manifest = json.loads(first[1:])
        except json.JSONDecodeError:
            manifest = {}
    return values, manifest


def generate_synthetic(kind, params, seed, out=''):
    """Draws a dataset of `kind` from stream (seed,) and writes it to `out`. Returns the path."""
    if kind not in COLUMNS:
        raise ConfigError('Unknown dataset kind {}.'.format(kind))
    rng = RandomStreams(seed).generator()
    params = dict(params)
    if kind == 'changepoint':
        values = changepoint_events(params['length'], params['changepoints'], params['heights'], rng)
        params = {key: params[key] for key in ('length', 'changepoints', 'heights')}
    else:
        keys = ('T', 'theta', 'a', 'phi', 'sigma_z2', 'sigma_y2')
        params = {key: params[key] for key in keys}
        values = lgssm_observations(params['T'], params['theta'], rng, a=params['a'], phi=params['phi'],
                                    sigma_z2=params['sigma_z2'], sigma_y2=params['sigma_y2'])

    out = out or FILE_NAMES[kind]
    folder = os.path.dirname(out)
    if folder and not os.path.isdir(folder):
        os.makedirs(folder)
    manifest = {'kind': kind, 'params': params, 'seed': int(seed), 'count': int(values.size),
                'generator': 'Philox, stream (seed,)'}
    write_dataset(out, COLUMNS[kind], values, manifest)
    return out


def main(args):
    path = generate_synthetic(args.kind, vars(args.synth_args), args.seed, args.out)
    print('Wrote {} dataset to {}.'.format(args.kind, path), flush=True)
    return 0


if __name__ == '__main__':
    parser = SynthArgParser()
    args = parser.parse_args()
    raise SystemExit(main(args))
