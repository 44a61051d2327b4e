"""Contains the exchange algorithm and its averaged-ratio version on an enumerable count model."""
import itertools

import numpy as np
from scipy import stats
from scipy.special import logsumexp, softmax

from kernels.core import AuxiliaryScheme, MhOutcome, TargetModel, accept_decision
from kernels.mhaar import MhaarConfig, mhaar_transition_probs
from util import check_log, log_mean_exp, parallel_map


class CountModel(TargetModel):
    """d coordinates on {0, ..., K-1} with g_theta(y) = exp(theta * sum(y)).

    The prior on theta is Normal(0, prior_sd^2), or uniform on `grid` when a
    grid is given. The normalising constant is computed by enumeration.
    """
    def __init__(self, d, k, prior_sd=1.0, grid=None):
        super(CountModel, self).__init__()
        if k ** d > 10 ** 4:
            raise ValueError('Support of size {} is too large to enumerate.'.format(k ** d))
        self.d = d
        self.k = k
        self.prior_sd = prior_sd
        self.grid = None if grid is None else [float(g) for g in grid]
        self.support = np.array(list(itertools.product(range(k), repeat=d)), dtype=int)
        self.stats = self.support.sum(axis=1).astype(float)
        self.latent_descriptor = 'counts[{}]'.format(d)

    def statistic(self, y):
        return float(np.sum(y))

    def log_g(self, theta, y):
        return theta * self.statistic(y)

    def log_normaliser(self, theta):
        return float(logsumexp(theta * self.stats))

    def probs(self, theta):
        return softmax(theta * self.stats)

    def sample_exact(self, theta, rng):
        """Exact draw from l_theta by inverse CDF over the enumerated support."""
        cdf = np.cumsum(self.probs(theta))
        idx = min(int(np.searchsorted(cdf, rng.random(), side='right')), len(cdf) - 1)
        return tuple(int(x) for x in self.support[idx])

    def log_prior(self, theta):
        if self.grid is not None:
            return -np.log(len(self.grid)) if theta in self.grid else -np.inf
        return float(stats.norm.logpdf(theta, scale=self.prior_sd))

    def log_likelihood(self, theta, y):
        return self.log_g(theta, y) - self.log_normaliser(theta)

    def log_density(self, theta, z, y=None):
        return self.log_prior(theta) + (0.0 if y is None else self.log_likelihood(theta, y))

    def exact_posterior(self, grid, y):
        logp = np.array([self.log_prior(t) + self.log_likelihood(t, y) for t in grid])
        return softmax(logp)


def exchange_log_ratio(theta, vartheta, y, u, model, q):
    """log r_u(theta, vartheta) of the exchange algorithm for an auxiliary dataset u ~ l_vartheta."""
    log_num = q.log_density(vartheta, theta) + model.log_prior(vartheta)
    if np.isneginf(log_num):
        return -np.inf
    log_r = (log_num - q.log_density(theta, vartheta) - model.log_prior(theta)
             + model.log_g(vartheta, y) - model.log_g(theta, y)
             + model.log_g(theta, u) - model.log_g(vartheta, u))
    return check_log(log_r, 'exchange log-ratio')


def exchange_step(theta, y, model, q, rng):
    """Plain exchange algorithm step: one auxiliary dataset, accept with min{1, r_u}."""
    gen = rng.child(0).generator()
    vartheta = q.sample(theta, gen)
    u = model.sample_exact(vartheta, rng.child(1, 0).generator())
    log_r = exchange_log_ratio(theta, vartheta, y, u, model, q)
    if accept_decision(log_r, gen):
        return MhOutcome((vartheta, None), True, log_r)
    return MhOutcome((theta, None), False, log_r)


def averaged_exchange_step(theta, y, model, q, n, rng):
    """Exchange step averaging N auxiliary-dataset ratios.

    c=1 draws all N datasets at vartheta. c=2 draws the first at vartheta and
    the remaining N-1 at theta, then accepts with the inverse of the reverse
    average.
    """
    if n < 1:
        raise ValueError('Number of auxiliary datasets must be at least 1, got {}.'.format(n))
    gen = rng.child(0).generator()
    vartheta = q.sample(theta, gen)
    c = 1 if gen.random() < 0.5 else 2

    def draw(i):
        at = vartheta if (c == 1 or i == 0) else theta
        return model.sample_exact(at, rng.child(1, i).generator())

    us = parallel_map(draw, range(n))
    if c == 1:
        log_r = log_mean_exp([exchange_log_ratio(theta, vartheta, y, u, model, q) for u in us])
    else:
        log_rev = log_mean_exp([exchange_log_ratio(vartheta, theta, y, u, model, q) for u in us])
        log_r = -log_rev
    if accept_decision(log_r, gen):
        return MhOutcome((vartheta, None), True, log_r, c)
    return MhOutcome((theta, None), False, log_r, c)


class ExchangeScheme(AuxiliaryScheme):
    """The exchange algorithm as an auxiliary scheme: u ~ l_vartheta, involution keeps u."""
    def __init__(self, model, q, y):
        super(ExchangeScheme, self).__init__()
        self.model = model
        self.q = q
        self.y = y

    def sample_u(self, theta, vartheta, z, rng):
        return self.model.sample_exact(vartheta, rng)

    def log_ratio(self, theta, vartheta, z, u):
        return exchange_log_ratio(theta, vartheta, self.y, u, self.model, self.q)

    def phi1(self, theta, vartheta, z, u):
        return z

    def phi2(self, theta, vartheta, z, u):
        return u

    def u_support(self, theta, vartheta, z):
        probs = self.model.probs(vartheta)
        return [(tuple(int(x) for x in s), float(p)) for s, p in zip(self.model.support, probs)]

    def sample_point(self, rng):
        """theta from the prior (uniform on the grid when there is one) and vartheta from q."""
        if self.model.grid is not None:
            theta = self.model.grid[int(rng.integers(len(self.model.grid)))]
        else:
            theta = float(self.model.prior_sd * rng.standard_normal())
        return theta, self.q.sample(theta, rng), None


def averaged_exchange_transition_probs(state, model, q, y, n):
    """Exact law of `averaged_exchange_step` on a finite parameter grid."""
    return mhaar_transition_probs(state, q, ExchangeScheme(model, q, y), MhaarConfig(n))


def averaged_exchange_kernel(model, q, y, n, exact=True):
    def step(state, rng):
        return averaged_exchange_step(state[0], y, model, q, n, rng).next_state

    if exact:
        step.transition_probs = lambda state: averaged_exchange_transition_probs(state, model, q, y, n)
    return step


def ratio_estimator_mean(theta, vartheta, model, n, rng):
    """(1/n) sum g_theta(u_i) / g_vartheta(u_i) with u_i ~ l_vartheta; unbiased for C_theta / C_vartheta."""
    gen = rng.generator()
    draws = [model.sample_exact(vartheta, gen) for _ in range(n)]
    ratios = np.exp([model.log_g(theta, u) - model.log_g(vartheta, u) for u in draws])
    return float(ratios.mean()), float(ratios.std(ddof=1) / np.sqrt(n))
