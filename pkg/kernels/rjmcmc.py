"""Contains the trans-dimensional averaged-ratio kernel for the Poisson multiple change-point model."""
import numpy as np
from scipy import stats
from scipy.special import gammaln

from kernels.core import AuxiliaryScheme, MhOutcome, ProposalKernel, accept_decision
from kernels.mhaar import MhaarConfig, mhaar_step
from util import check_log


class TransState(object):
    """m segments: changepoints 0 = s_0 < ... < s_m = L and heights h_1..h_m."""
    def __init__(self, s, h):
        self.s = np.asarray(s, dtype=float)
        self.h = np.asarray(h, dtype=float)
        self.m = self.h.size

    def validate(self, length=None):
        if self.s.size != self.m + 1:
            raise ValueError('{} heights need {} changepoints, got {}.'.format(self.m, self.m + 1, self.s.size))
        if self.s[0] != 0.0 or np.any(np.diff(self.s) <= 0.0):
            raise ValueError('Changepoints must start at 0 and increase strictly: {}.'.format(self.s))
        if length is not None and self.s[-1] != length:
            raise ValueError('Last changepoint {} differs from the observation length {}.'.format(self.s[-1], length))
        if np.any(self.h <= 0.0):
            raise ValueError('Heights must be positive: {}.'.format(self.h))
        return self

    @property
    def length(self):
        return float(self.s[-1])

    def __eq__(self, other):
        return (isinstance(other, TransState) and np.array_equal(self.s, other.s)
                and np.array_equal(self.h, other.h))

    def __hash__(self):
        return hash((self.s.tobytes(), self.h.tobytes()))

    def __repr__(self):
        return 'TransState(s={}, h={})'.format(self.s.tolist(), self.h.tolist())


def changepoint_loglik(state, events):
    """sum_j [count_j * log h_j - h_j * (s_j - s_{j-1})], counts over [s_{j-1}, s_j)."""
    state.validate()
    events = np.asarray(events, dtype=float)
    if events.size and (events.min() < 0.0 or events.max() > state.length):
        raise ValueError('Events must lie in [0, {}].'.format(state.length))
    seg = np.clip(np.searchsorted(state.s, events, side='right') - 1, 0, state.m - 1)
    counts = np.bincount(seg, minlength=state.m)
    return float(np.sum(counts * np.log(state.h) - state.h * np.diff(state.s)))


class ChangepointPrior(object):
    """Truncated Poisson on the number of changepoints, even-order statistics on
    their positions and iid Gamma heights."""
    def __init__(self, length, lam=3.0, m_max=30, height_shape=1.0, height_rate=1.0):
        if length <= 0.0:
            raise ValueError('Observation length must be positive, got {}.'.format(length))
        self.length = float(length)
        self.lam = lam
        self.m_max = int(m_max)
        self.height = stats.gamma(a=height_shape, scale=1.0 / height_rate)

    def log_prior(self, state):
        m = state.m
        if m < 1 or m > self.m_max:
            return -np.inf
        k = m - 1
        log_pm = stats.poisson.logpmf(k, self.lam)
        log_s = gammaln(2 * k + 2) - (2 * k + 1) * np.log(self.length) + np.sum(np.log(np.diff(state.s)))
        return float(log_pm + log_s + np.sum(self.height.logpdf(state.h)))


def log_posterior(state, events, prior):
    log_p = prior.log_prior(state)
    if np.isneginf(log_p):
        return -np.inf
    return check_log(log_p + changepoint_loglik(state, events), 'change-point log-posterior')


class ModelIndexProposal(ProposalKernel):
    """m -> m +/- 1 with equal probability, reflecting at 1 and m_max."""
    def __init__(self, m_max):
        super(ModelIndexProposal, self).__init__()
        if m_max < 2:
            raise ValueError('Need at least two models, got m_max={}.'.format(m_max))
        self.m_max = m_max

    def support(self, m):
        if m == 1:
            return [(2, 1.0)]
        if m == self.m_max:
            return [(self.m_max - 1, 1.0)]
        return [(m - 1, 0.5), (m + 1, 0.5)]

    def sample(self, m, rng):
        support = self.support(m)
        if len(support) == 1:
            return support[0][0]
        return support[0][0] if rng.random() < 0.5 else support[1][0]

    def log_density(self, m, m_new):
        for value, p in self.support(m):
            if value == m_new:
                return np.log(p)
        return -np.inf


class DimMatchScheme(object):
    """Dimension-matching auxiliary variables u_{m,m'} and the bijection between
    (z_m, u_{m,m'}) and (z_{m'}, u_{m',m})."""
    def sample_u(self, m, m_new, z, rng):
        raise NotImplementedError

    def log_density(self, m, m_new, z, u):
        raise NotImplementedError

    def map(self, m, m_new, z, u):
        """Returns (z_new, u_new, log_jacobian); z_new is None for impossible moves."""
        raise NotImplementedError


class BirthDeathScheme(DimMatchScheme):
    """Birth inserts s* ~ U[0, L] with a fresh height h* on its right; death removes
    a uniformly chosen interior changepoint and the height on its right.

    Birth variables are (s*, h*, j) with j the index s* takes in the new state;
    the death variable is the index of the removed changepoint.
    """
    def __init__(self, length, prior_heights):
        super(BirthDeathScheme, self).__init__()
        self.length = float(length)
        self.prior_heights = prior_heights

    def dimension(self, m):
        return 2 * m - 1

    def aux_dimension(self, m, m_new):
        return 2 if m_new == m + 1 else 0

    def sample_u(self, m, m_new, z, rng):
        if m_new == m + 1:
            s_new = float(rng.uniform(0.0, self.length))
            h_new = float(self.prior_heights.rvs(random_state=rng))
            return (s_new, h_new, int(np.searchsorted(z.s, s_new, side='right')))
        if m_new == m - 1:
            if m < 2:
                raise ValueError('Death move needs an interior changepoint; state has {} segment.'.format(m))
            return int(rng.integers(1, m))
        raise ValueError('Birth-death scheme moves between adjacent models, not {} -> {}.'.format(m, m_new))

    def log_density(self, m, m_new, z, u):
        if m_new == m + 1:
            s_new, h_new, j = u
            if not 0.0 <= s_new <= self.length:
                return -np.inf
            return float(-np.log(self.length) + self.prior_heights.logpdf(h_new))
        return float(-np.log(m - 1))

    def map(self, m, m_new, z, u):
        if m_new == m + 1:
            s_new, h_new, j = u
            if s_new in z.s or not 0 < j <= m:
                return None, None, 0.0
            z_new = TransState(np.insert(z.s, j, s_new), np.insert(z.h, j, h_new))
            return z_new, j, 0.0
        if m < 2:
            raise ValueError('Death move needs an interior changepoint; state has {} segment.'.format(m))
        j = u
        z_new = TransState(np.delete(z.s, j), np.delete(z.h, j))
        return z_new, (float(z.s[j]), float(z.h[j]), j), 0.0


def birth_death_scheme(length, prior_heights):
    if length <= 0.0:
        raise ValueError('Observation length must be positive, got {}.'.format(length))
    return BirthDeathScheme(length, prior_heights)


class TransDimensionalScheme(AuxiliaryScheme):
    """Turns a dimension-matching scheme and a posterior into an averaged-ratio scheme on (m, z_m)."""
    def __init__(self, dim_scheme, events, prior, proposal):
        super(TransDimensionalScheme, self).__init__()
        self.dim_scheme = dim_scheme
        self.events = np.asarray(events, dtype=float)
        self.prior = prior
        self.proposal = proposal

    def sample_u(self, m, m_new, z, rng):
        return self.dim_scheme.sample_u(m, m_new, z, rng)

    def log_ratio(self, m, m_new, z, u):
        z_new, u_new, log_jac = self.dim_scheme.map(m, m_new, z, u)
        if z_new is None:
            return -np.inf
        log_num = log_posterior(z_new, self.events, self.prior)
        if np.isneginf(log_num):
            return -np.inf
        log_num += self.proposal.log_density(m_new, m) + self.dim_scheme.log_density(m_new, m, z_new, u_new)
        log_den = (log_posterior(z, self.events, self.prior) + self.proposal.log_density(m, m_new)
                   + self.dim_scheme.log_density(m, m_new, z, u))
        return check_log(log_num - log_den + log_jac, 'trans-dimensional log-ratio')

    def phi1(self, m, m_new, z, u):
        z_new = self.dim_scheme.map(m, m_new, z, u)[0]
        return z if z_new is None else z_new

    def phi2(self, m, m_new, z, u):
        return self.dim_scheme.map(m, m_new, z, u)[1]

    def sample_point(self, rng):
        """m uniform on 1..m_max, m' from the model-index proposal and z_m from the prior given m."""
        m = int(rng.integers(1, self.proposal.m_max + 1))
        inner = np.sort(rng.uniform(0.0, self.prior.length, m - 1))
        s = np.concatenate([[0.0], inner, [self.prior.length]])
        h = self.prior.height.rvs(size=m, random_state=rng)
        return m, self.proposal.sample(m, rng), TransState(s, h)


def coin_weight(mode):
    """omega(m, m', z, c): 'half' is the fair coin; 'birth_averaged' averages births and inverts deaths."""
    if mode == 'half':
        return lambda m, m_new, z, c: 0.5
    if mode == 'birth_averaged':
        def omega(m, m_new, z, c):
            w1 = 1.0 if m_new > m else 0.0
            return w1 if c == 1 else 1.0 - w1
        return omega
    raise ValueError('Unknown coin mode {}.'.format(mode))


def rmj_step(state, events, scheme, n, omega, rng):
    """One trans-dimensional averaged-ratio move from `state`.

    `scheme` is a TransDimensionalScheme; `omega` is a coin-weight callable.
    Returns an MhOutcome whose next_state is the new TransState.
    """
    cfg = MhaarConfig(n, coin_weight=omega)
    out = mhaar_step(state.m, state, None, scheme.proposal, scheme, cfg, rng)
    return MhOutcome(out.next_state[1], out.accepted, out.log_ratio_used, out.coin)


def _reflect(x, lo, hi):
    width = hi - lo
    y = np.mod(x - lo, 2.0 * width)
    return lo + (2.0 * width - y if y > width else y)


def within_model_sweep(state, events, prior, rng, height_sd=0.3, position_sd=None):
    """Log-scale random walk on every height, then a reflected random walk on
    every interior changepoint inside its neighbours' interval.

    `rng` is a numpy Generator. Returns (new_state, n_accepted).
    """
    position_sd = position_sd if position_sd is not None else 0.05 * prior.length
    current = state
    log_post = log_posterior(current, events, prior)
    n_accepted = 0

    for j in range(current.m):
        h = current.h.copy()
        h[j] = h[j] * np.exp(height_sd * rng.standard_normal())
        proposal = TransState(current.s, h)
        log_new = log_posterior(proposal, events, prior)
        if accept_decision(log_new - log_post + np.log(h[j]) - np.log(current.h[j]), rng):
            current, log_post = proposal, log_new
            n_accepted += 1

    for j in range(1, current.m):
        s = current.s.copy()
        s[j] = _reflect(s[j] + position_sd * rng.standard_normal(), s[j - 1], s[j + 1])
        if not s[j - 1] < s[j] < s[j + 1]:
            continue
        proposal = TransState(s, current.h)
        log_new = log_posterior(proposal, events, prior)
        if accept_decision(log_new - log_post, rng):
            current, log_post = proposal, log_new
            n_accepted += 1

    return current, n_accepted


def initial_state(events, prior):
    """Single segment at the maximum-likelihood height."""
    events = np.asarray(events, dtype=float)
    rate = max(events.size, 1) / prior.length
    return TransState([0.0, prior.length], [rate])


def model_index_histogram(ms, m_max):
    """Empirical P(m) over m = 1..m_max."""
    ms = np.asarray(ms, dtype=int)
    counts = np.bincount(ms, minlength=m_max + 1)[1:m_max + 1]
    return counts / counts.sum()
