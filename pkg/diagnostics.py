"""Contains chain traces and the chain-quality metrics reported for every experiment."""
from collections import namedtuple
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats


@dataclass
class ChainTrace:
    """Ordered samples of one chain with acceptance flags and coins."""
    samples: np.ndarray
    accept_flags: np.ndarray
    coins: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        self.accept_flags = np.asarray(self.accept_flags, dtype=bool)
        if self.coins is not None:
            self.coins = np.asarray(self.coins)
        lengths = {len(self.samples), len(self.accept_flags)}
        if self.coins is not None:
            lengths.add(len(self.coins))
        if len(lengths) != 1:
            raise ValueError('Chain series have unequal lengths: {}.'.format(sorted(lengths)))

    def __len__(self):
        return len(self.samples)

    @classmethod
    def from_outcomes(cls, samples, outcomes, meta=None):
        coins = [0 if o.coin is None else o.coin for o in outcomes]
        return cls(samples=np.asarray(samples),
                   accept_flags=[o.accepted for o in outcomes],
                   coins=np.asarray(coins, dtype=int),
                   meta=dict(meta or {}))


IacEstimate = namedtuple('IacEstimate', ['value', 'window', 'flag'])


class IntegratedAutocorrTime(object):
    """IAC by the autocorrelation sum with Sokal's adaptive window.

    The window W is the smallest lag with W >= c * tau(W). A constant series
    has IAC 1 with flag 'constant'; a series whose estimate falls below 1 is
    flagged 'antithetic'.
    """
    def __init__(self, window_c=6.0, min_points=100):
        self.window_c = window_c
        self.min_points = min_points

    def autocorrelation(self, x):
        n = x.size
        x = x - x.mean()
        size = 1 << int(np.ceil(np.log2(2 * n)))
        f = np.fft.rfft(x, n=size)
        acov = np.fft.irfft(f * np.conj(f), n=size)[:n] / n
        return acov / acov[0]

    def __call__(self, series, burn_in_fraction=0.25):
        if not 0.0 <= burn_in_fraction < 1.0:
            raise ValueError('Burn-in fraction must lie in [0, 1), got {}.'.format(burn_in_fraction))
        series = np.asarray(series, dtype=float)
        x = series[int(np.floor(burn_in_fraction * series.size)):]
        if x.size < self.min_points:
            raise ValueError('IAC needs at least {} post-burn-in points, got {}.'
                             .format(self.min_points, x.size))
        if np.ptp(x) == 0.0:
            return IacEstimate(1.0, 0, 'constant')

        rho = self.autocorrelation(x)
        taus = 2.0 * np.cumsum(rho) - 1.0
        window = x.size - 1
        for w in range(1, x.size):
            if w >= self.window_c * taus[w]:
                window = w
                break
        tau = float(taus[window])
        if tau < 1.0:
            return IacEstimate(max(tau, 1.0 / x.size), window, 'antithetic')
        return IacEstimate(tau, window, None)


iac = IntegratedAutocorrTime()


def ess(series, burn_in_fraction=0.25):
    """Effective sample size n / IAC of the post-burn-in series."""
    n = np.asarray(series).size - int(np.floor(burn_in_fraction * np.asarray(series).size))
    return n / iac(series, burn_in_fraction).value


def batch_means_ci(series, n_batches=20, level=0.95, burn_in_fraction=0.25):
    """Batch-means IAC estimate with a chi-square confidence interval.

    Returns (estimate, lower, upper).
    """
    series = np.asarray(series, dtype=float)
    x = series[int(np.floor(burn_in_fraction * series.size)):]
    b = x.size // n_batches
    if b < 2:
        raise ValueError('Series of {} points is too short for {} batches.'.format(x.size, n_batches))
    x = x[:b * n_batches]
    var = x.var(ddof=1)
    if var == 0.0:
        return 1.0, 1.0, 1.0
    means = x.reshape(n_batches, b).mean(axis=1)
    estimate = b * means.var(ddof=1) / var
    dof = n_batches - 1
    lower = estimate * dof / stats.chi2.ppf(0.5 + level / 2.0, dof)
    upper = estimate * dof / stats.chi2.ppf(0.5 - level / 2.0, dof)
    return float(estimate), float(lower), float(upper)


def acceptance_rate(trace):
    return float(np.mean(trace.accept_flags)) if len(trace) else 0.0


def coin_acceptance(trace):
    """Acceptance rate conditional on each coin value, with its standard error."""
    out = {}
    if trace.coins is None:
        return out
    for c in (1, 2):
        flags = trace.accept_flags[trace.coins == c]
        if flags.size:
            p = float(flags.mean())
            out[c] = (p, float(np.sqrt(p * (1.0 - p) / flags.size)), int(flags.size))
    return out


def ensemble_average(runs, f=None):
    """Per-iteration cross-run mean and standard error of f(sample)."""
    if len(runs) < 2:
        raise ValueError('Ensemble averages need at least 2 runs, got {}.'.format(len(runs)))
    lengths = {len(run) for run in runs}
    if len(lengths) != 1:
        raise ValueError('Runs have ragged lengths: {}.'.format(sorted(lengths)))
    f = f or (lambda s: s)
    values = np.stack([np.asarray(f(run.samples), dtype=float) for run in runs])
    mean = values.mean(axis=0)
    se = values.std(axis=0, ddof=1) / np.sqrt(len(runs))
    return mean, se


def stationarity_residual(matrix, pi):
    """Returns (max_j |(pi^T P)_j - pi_j|, max_ij |pi_i P_ij - pi_j P_ji|)."""
    P = np.asarray(matrix, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] != pi.size:
        raise ValueError('Matrix of shape {} does not match distribution of size {}.'
                         .format(P.shape, pi.size))
    flow = pi[:, None] * P
    return float(np.max(np.abs(pi @ P - pi))), float(np.max(np.abs(flow - flow.T)))


def detailed_balance_zscore(matrix, pi, trials):
    """Largest detailed-balance residual in units of its Monte Carlo standard error."""
    P = np.asarray(matrix, dtype=float)
    pi = np.asarray(pi, dtype=float)
    se2 = P * (1.0 - P) / trials
    flow = pi[:, None] * P
    resid = np.abs(flow - flow.T)
    scale = np.sqrt((pi[:, None] ** 2) * se2 + (pi[None, :] ** 2) * se2.T)
    # Pairs with zero standard error must balance exactly.
    scale = np.where(scale > 0.0, scale, np.inf)
    z = np.where(np.isinf(scale), np.where(resid > 1e-12, np.inf, 0.0), resid / scale)
    return float(np.max(z))


def tv_distance(p, q):
    return 0.5 * float(np.sum(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))))


def stationary_distribution(matrix):
    """Left Perron vector of a row-stochastic matrix, normalised to sum 1."""
    values, vectors = np.linalg.eig(np.asarray(matrix, dtype=float).T)
    v = np.real(vectors[:, np.argmin(np.abs(values - 1.0))])
    return v / v.sum()
