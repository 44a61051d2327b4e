"""Contains the involution-based Metropolis-Hastings engine and the transition-matrix oracle."""
from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from util import NumericalContractError, check_log


class TargetModel(object):
    """Unnormalised log-density of pi(theta, z)."""
    param_dim = 1
    latent_descriptor = None

    def log_density(self, theta, z):
        raise NotImplementedError


class ProposalKernel(object):
    """Parameter proposal q(theta, .)."""
    def sample(self, theta, rng):
        raise NotImplementedError

    def log_density(self, theta, vartheta):
        raise NotImplementedError

    def support(self, theta):
        """Returns [(vartheta, prob), ...] for finite proposals, None otherwise."""
        return None


class AuxiliaryScheme(object):
    """One averaged-ratio instance: the sampler of Q, the per-draw ratio and the involution maps.

    `log_ratio` is the full log r_u(theta, vartheta, z), proposal and prior
    factors included. Schemes whose Q has finite support also implement
    `u_support`, which returns [(u, prob), ...].
    """
    def sample_u(self, theta, vartheta, z, rng):
        raise NotImplementedError

    def log_ratio(self, theta, vartheta, z, u):
        raise NotImplementedError

    def phi1(self, theta, vartheta, z, u):
        raise NotImplementedError

    def phi2(self, theta, vartheta, z, u):
        raise NotImplementedError

    def involution(self, theta, vartheta, z, u):
        return (vartheta, theta,
                self.phi1(theta, vartheta, z, u),
                self.phi2(theta, vartheta, z, u))

    def u_support(self, theta, vartheta, z):
        return None

    def sample_point(self, rng):
        """Draws (theta, vartheta, z) at which the involution can be exercised."""
        raise NotImplementedError('{} has no default point sampler; pass one to involution_check.'
                                  .format(type(self).__name__))


@dataclass
class MhOutcome:
    next_state: Any
    accepted: bool
    log_ratio_used: float
    coin: Optional[int] = None
    refreshed: bool = False


class FiniteProposal(ProposalKernel):
    """Random walk on a finite grid: each neighbour with prob (1 - alpha) / 2.

    Neighbour mass falling off the grid stays put, which keeps q symmetric.
    """
    def __init__(self, grid, alpha=0.0):
        super(FiniteProposal, self).__init__()
        self.grid = [float(g) for g in grid]
        self.alpha = alpha
        if len(self.grid) < 2:
            raise ValueError('A finite proposal needs at least two grid points, got {}.'.format(len(self.grid)))

    def _index(self, theta):
        for i, g in enumerate(self.grid):
            if g == theta:
                return i
        raise ValueError('{} is not a grid point.'.format(theta))

    def support(self, theta):
        i = self._index(theta)
        out = defaultdict(float)
        out[theta] += self.alpha
        for j in (i - 1, i + 1):
            if 0 <= j < len(self.grid):
                out[self.grid[j]] += (1.0 - self.alpha) / 2.0
            else:
                out[theta] += (1.0 - self.alpha) / 2.0
        return [(g, p) for g, p in out.items() if p > 0.0]

    def sample(self, theta, rng):
        support = self.support(theta)
        probs = np.array([p for _, p in support])
        idx = min(int(np.searchsorted(np.cumsum(probs), rng.random(), side='right')), len(support) - 1)
        return support[idx][0]

    def log_density(self, theta, vartheta):
        for g, p in self.support(theta):
            if g == vartheta:
                return float(np.log(p))
        return -np.inf


class GaussianRandomWalk(ProposalKernel):
    """Symmetric Gaussian random walk on a real parameter."""
    def __init__(self, scale):
        super(GaussianRandomWalk, self).__init__()
        self.scale = scale

    def sample(self, theta, rng):
        return float(theta + self.scale * rng.standard_normal())

    def log_density(self, theta, vartheta):
        d = (vartheta - theta) / self.scale
        return float(-0.5 * d * d - np.log(self.scale) - 0.5 * np.log(2.0 * np.pi))


def accept_decision(log_r, rng):
    """Returns True with probability min{1, exp(log_r)}."""
    if np.isnan(log_r):
        raise NumericalContractError('NaN acceptance log-ratio.')
    if log_r >= 0.0:
        return True
    if np.isneginf(log_r):
        return False
    return bool(np.log(rng.random()) < log_r)


def accept_prob(log_r):
    """min{1, exp(log_r)} for exact transition enumerations."""
    if np.isnan(log_r):
        raise NumericalContractError('NaN acceptance log-ratio.')
    return 1.0 if log_r >= 0.0 else float(np.exp(log_r))


def involution_check(scheme, samples, rng, point_sampler=None):
    """Applies the full involution twice at random points and reports discrepancies.

    `point_sampler(rng)` returns (theta, vartheta, z) at which u is drawn; it
    defaults to `scheme.sample_point`.
    Returns a dict with the max round-trip discrepancy, the max skew residual
    |log r(xi) + log r(phi(xi))| over finite ratios and the number of points
    that failed either check at tolerance 1e-10.
    """
    point_sampler = point_sampler or scheme.sample_point
    max_round_trip = 0.0
    max_skew = 0.0
    n_finite = 0
    failures = 0
    for _ in range(samples):
        theta, vartheta, z = point_sampler(rng)
        u = scheme.sample_u(theta, vartheta, z, rng)
        image = scheme.involution(theta, vartheta, z, u)
        back = scheme.involution(*image)

        round_trip = max(_discrepancy(a, b) for a, b in zip((theta, vartheta, z, u), back))
        max_round_trip = max(max_round_trip, round_trip)

        log_r = check_log(scheme.log_ratio(theta, vartheta, z, u), 'scheme log-ratio')
        log_r_image = check_log(scheme.log_ratio(*image), 'scheme log-ratio')
        skew = 0.0
        if np.isfinite(log_r) and np.isfinite(log_r_image):
            n_finite += 1
            skew = abs(log_r + log_r_image)
            max_skew = max(max_skew, skew)
        if round_trip > 1e-10 or skew > 1e-10:
            failures += 1

    return {'samples': samples,
            'finite_ratios': n_finite,
            'max_round_trip': max_round_trip,
            'max_skew': max_skew,
            'failures': failures}


def _discrepancy(a, b):
    if a is None and b is None:
        return 0.0
    if isinstance(a, (tuple, list)) and isinstance(b, (tuple, list)) and len(a) == len(b):
        return max([_discrepancy(x, y) for x, y in zip(a, b)] + [0.0])
    try:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
    except (TypeError, ValueError):
        return 0.0 if a == b else np.inf
    if a.shape != b.shape:
        return np.inf
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def build_transition_matrix(step_fn, states, trials, rng):
    """Returns the row-stochastic matrix of a single-step kernel on an enumerated state list.

    If `step_fn` has a `transition_probs(state)` attribute returning
    {next_state: prob}, rows are exact. Otherwise row i is estimated from
    `trials` calls `step_fn(states[i], streams)`, where streams is the node
    `rng.child(i, trial)` of a RandomStreams tree.
    """
    states = list(states)
    if not states:
        raise ValueError('Cannot build a transition matrix on an empty state list.')
    index = {s: i for i, s in enumerate(states)}
    n = len(states)
    P = np.zeros((n, n))

    exact = getattr(step_fn, 'transition_probs', None)
    for i, s in enumerate(states):
        if exact is not None:
            for s_next, p in exact(s).items():
                P[i, _lookup(index, s_next)] += p
        else:
            for trial in range(trials):
                s_next = step_fn(s, rng.child(i, trial))
                P[i, _lookup(index, s_next)] += 1.0
            P[i] /= trials
    return P


def _lookup(index, state):
    if state not in index:
        raise ValueError('Kernel moved to a state outside the enumerated list: {}.'.format(state))
    return index[state]


class ExactKernel(object):
    """Wraps a step function and an exact enumerator into one oracle-ready kernel."""
    def __init__(self, step, transition_probs):
        self.step = step
        self.transition_probs = transition_probs

    def __call__(self, state, rng):
        return self.step(state, rng)


def pmr_step(theta, z, model, q, scheme, rng):
    """Single-estimator pseudo-marginal-ratio MH step.

    `rng` is a RandomStreams node; all draws come from its first child.
    """
    gen = rng.child(0).generator()
    vartheta = q.sample(theta, gen)
    u = scheme.sample_u(theta, vartheta, z, gen)
    log_r = check_log(scheme.log_ratio(theta, vartheta, z, u), 'scheme log-ratio')
    if accept_decision(log_r, gen):
        return MhOutcome((vartheta, scheme.phi1(theta, vartheta, z, u)), True, log_r)
    return MhOutcome((theta, z), False, log_r)


def pmr_transition_probs(state, q, scheme):
    """Exact transition law of `pmr_step` when q and Q have finite support."""
    theta, z = state
    out = defaultdict(float)
    for vartheta, q_prob in q.support(theta):
        for u, u_prob in scheme.u_support(theta, vartheta, z):
            a = accept_prob(scheme.log_ratio(theta, vartheta, z, u))
            out[(vartheta, scheme.phi1(theta, vartheta, z, u))] += q_prob * u_prob * a
            out[(theta, z)] += q_prob * u_prob * (1.0 - a)
    return dict(out)
