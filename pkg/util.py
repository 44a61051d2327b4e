"""Contains error classes, random streams, log-domain helpers and artifact writers."""
import hashlib
import json
import os

import numpy as np
from joblib import Parallel, delayed
from scipy.special import logsumexp, softmax


# Log-weights below this floor underflow exp() in double precision.
LOG_WEIGHT_FLOOR = -708.0


class NumericalContractError(ArithmeticError):
    """Raised when a density, ratio or weight breaks the numerical contract (NaN, degeneracy)."""
    pass


class ConfigError(ValueError):
    """Raised on invalid experiment configurations and missing inputs."""
    pass


def check_log(value, what='log-density'):
    """Returns `value` unchanged unless it contains NaN."""
    if np.any(np.isnan(value)):
        raise NumericalContractError('NaN encountered in {}.'.format(what))
    return value


class RandomStreams(object):
    """Node in a tree of counter-based random streams.

    Every node is addressed by (seed, path). Its generator is a Philox stream
    keyed by `SeedSequence(seed, spawn_key=path)`, with the counter starting at
    zero, so the numbers drawn from a node never depend on which thread asked
    for them or in which order sibling nodes were used.
    """
    def __init__(self, seed, path=()):
        self.seed = int(seed)
        self.path = tuple(int(i) for i in path)

    def child(self, *idx):
        return RandomStreams(self.seed, self.path + tuple(idx))

    def spawn(self, n):
        return [self.child(i) for i in range(n)]

    def key(self):
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return seq.generate_state(2, np.uint64)

    def generator(self):
        return np.random.Generator(np.random.Philox(key=self.key()))

    def __repr__(self):
        return 'RandomStreams(seed={}, path={})'.format(self.seed, self.path)


_INNER_THREADS = 1


def set_inner_threads(threads):
    """Sets the worker count used by replicate-level maps inside a kernel step."""
    global _INNER_THREADS
    _INNER_THREADS = max(1, int(threads))


def inner_threads():
    return _INNER_THREADS


def parallel_map(fn, items, threads=None):
    """Maps `fn` over `items` on a thread pool, keeping input order."""
    items = list(items)
    threads = inner_threads() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    return Parallel(n_jobs=threads, backend='threading')(delayed(fn)(item) for item in items)


def log_mean_exp(log_values):
    """Returns log((1/N) sum exp(log_values)); all -inf gives -inf."""
    log_values = check_log(np.asarray(log_values, dtype=float), 'log-ratio vector')
    if log_values.size == 0:
        raise ValueError('Cannot average an empty vector of log-ratios.')
    if np.all(np.isneginf(log_values)):
        return -np.inf
    return float(logsumexp(log_values) - np.log(log_values.size))


def normalise_log_weights(log_weights, axis=-1):
    """Returns probabilities proportional to exp(log_weights) along `axis`."""
    log_weights = check_log(np.asarray(log_weights, dtype=float), 'log-weights')
    if np.any(np.all(np.isneginf(log_weights), axis=axis)):
        raise NumericalContractError('All categorical weights are zero.')
    return softmax(log_weights, axis=axis)


def categorical(log_weights, rng):
    """Draws one index with probability proportional to exp(log_weights)."""
    probs = normalise_log_weights(log_weights)
    idx = int(np.searchsorted(np.cumsum(probs), rng.random(), side='right'))
    # Final bucket absorbs rounding residue of the cumulative sum.
    return min(idx, probs.size - 1)


def inverse_cdf_rows(log_weights, u):
    """Inverts the normalised CDF of each row of `log_weights` at the matching entry of `u`."""
    probs = normalise_log_weights(log_weights, axis=1)
    idx = (np.cumsum(probs, axis=1) < np.asarray(u)[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def categorical_rows(log_weights, rng):
    """Draws one index per row of a 2-D array of log-weights."""
    log_weights = np.asarray(log_weights, dtype=float)
    return inverse_cdf_rows(log_weights, rng.random(log_weights.shape[0]))


def multinomial_indices(log_weights, size, rng):
    """Draws `size` iid indices proportional to exp(log_weights)."""
    probs = normalise_log_weights(log_weights)
    idx = np.searchsorted(np.cumsum(probs), rng.random(size), side='right')
    return np.minimum(idx, probs.size - 1)


def content_hash(text):
    if isinstance(text, str):
        text = text.encode('utf-8')
    return hashlib.sha256(text).hexdigest()


def file_hash(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b''):
            digest.update(block)
    return digest.hexdigest()


def write_json(path, obj):
    with open(path, 'w') as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write('\n')


class CsvLog(object):
    """Comma-separated log: the header is written once, rows are appended."""
    def __init__(self, path, header):
        self.path = path
        self.header = list(header)
        with open(self.path, 'w') as f:
            f.write(','.join(self.header) + '\n')

    def write(self, *rows):
        with open(self.path, 'a') as f:
            for row in rows:
                f.write(','.join(format_cell(cell) for cell in row) + '\n')


def format_cell(cell):
    """Formats one CSV cell; floats use repr so files round-trip bit-exactly."""
    if isinstance(cell, (bool, np.bool_)):
        return str(int(cell))
    if isinstance(cell, (float, np.floating)):
        return repr(float(cell))
    if cell is None:
        return ''
    return str(cell)


def read_series_csv(path, comment='#'):
    """Reads a one-column (or first-column) numeric CSV, skipping comment and header lines."""
    if not os.path.isfile(path):
        raise ConfigError('Input file {} does not exist.'.format(path))
    values = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith(comment):
                continue
            cell = line.split(',')[0]
            try:
                values.append(float(cell))
            except ValueError:
                # Header row.
                continue
    return np.asarray(values, dtype=float)
