"""Contains the product latent-variable model kernels: AIS-MCMC, the Rao-Blackwellised
averaged-ratio kernel and its refreshment / delayed-rejection second stage.

Particle matrices are T x M; column 0 holds the current latent path. Index
paths are length-T integer vectors with entries in 0..M-1, so the path of
zeros picks the current path.
"""
import itertools
from collections import defaultdict

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from kernels.core import MhOutcome, TargetModel, accept_decision, accept_prob
from util import NumericalContractError, categorical_rows, check_log, parallel_map

GAMMA_MID_MODES = ('theta', 'midpoint')
REFRESH_MODES = ('off', 'simple', 'general')


class ProductLatentModel(TargetModel):
    """pi(theta, z) proportional to eta(theta) prod_t gamma_{t,theta}(z_t).

    `gamma_mid` picks the bridging density gamma_{t,theta,vartheta}: 'theta'
    uses gamma_{t,theta} and 'midpoint' uses gamma_{t,(theta+vartheta)/2}.
    `latent_proposal` picks q_{t,theta,vartheta} the same way; it defaults
    to `gamma_mid`.
    """
    latent_dtype = float

    def __init__(self, T, gamma_mid='theta', latent_proposal=None):
        super(ProductLatentModel, self).__init__()
        latent_proposal = latent_proposal or gamma_mid
        for mode in (gamma_mid, latent_proposal):
            if mode not in GAMMA_MID_MODES:
                raise ValueError('Unknown bridging mode {}; expected one of {}.'.format(mode, GAMMA_MID_MODES))
        self.T = T
        self.gamma_mid = gamma_mid
        self.latent_proposal = latent_proposal

    def log_gamma(self, t, theta, z):
        raise NotImplementedError

    def log_prior(self, theta):
        raise NotImplementedError

    def sample_q_at(self, t, param, size, rng):
        raise NotImplementedError

    def log_q_at(self, t, param, z):
        raise NotImplementedError

    def q_support_at(self, t, param):
        return None

    def bridge(self, theta, vartheta, mode):
        return theta if mode == 'theta' else 0.5 * (theta + vartheta)

    def log_gamma_mid(self, t, theta, vartheta, z):
        return self.log_gamma(t, self.bridge(theta, vartheta, self.gamma_mid), z)

    def sample_q(self, t, theta, vartheta, size, rng):
        return self.sample_q_at(t, self.bridge(theta, vartheta, self.latent_proposal), size, rng)

    def log_q(self, t, theta, vartheta, z):
        return self.log_q_at(t, self.bridge(theta, vartheta, self.latent_proposal), z)

    def q_support(self, t, theta, vartheta):
        return self.q_support_at(t, self.bridge(theta, vartheta, self.latent_proposal))

    def log_gamma_matrix(self, theta, values):
        return np.stack([self.log_gamma(t, theta, values[t]) for t in range(self.T)])

    def log_q_matrix(self, theta, vartheta, values):
        return np.stack([self.log_q(t, theta, vartheta, values[t]) for t in range(self.T)])

    def log_density(self, theta, z):
        log_p = self.log_prior(theta)
        if np.isneginf(log_p):
            return -np.inf
        z = np.asarray(z)
        return float(log_p + sum(self.log_gamma(t, theta, z[t]) for t in range(self.T)))

    def symmetric_bridge(self):
        return self.gamma_mid == 'midpoint' and self.latent_proposal == 'midpoint'

    def check_support(self, theta, vartheta, rng, draws=100):
        """Spot-checks that gamma_{t,theta,vartheta} is finite wherever q_{t,theta,vartheta} puts mass."""
        for t in range(self.T):
            z = self.sample_q(t, theta, vartheta, draws, rng)
            if not np.all(np.isfinite(self.log_gamma_mid(t, theta, vartheta, z))):
                raise ValueError('Bridging density vanishes on the latent proposal support at t={}.'.format(t))
        return True


class GaussianLatentModel(ProductLatentModel):
    """z_t ~ N(theta, 1), y_t | z_t ~ N(z_t, eps^2), theta ~ N(0, prior_sd^2).

    The marginal y_t ~ N(theta, 1 + eps^2) is available in closed form.
    """
    def __init__(self, y, eps=0.5, prior_sd=10.0, gamma_mid='theta', latent_proposal=None):
        self.y = np.asarray(y, dtype=float)
        super(GaussianLatentModel, self).__init__(self.y.size, gamma_mid, latent_proposal)
        self.eps = eps
        self.prior_sd = prior_sd

    @classmethod
    def simulate(cls, theta, T, eps, rng, **kwargs):
        z = theta + rng.standard_normal(T)
        return cls(z + eps * rng.standard_normal(T), eps=eps, **kwargs)

    def log_gamma(self, t, theta, z):
        return stats.norm.logpdf(z, loc=theta) + stats.norm.logpdf(self.y[t], loc=z, scale=self.eps)

    def log_gamma_matrix(self, theta, values):
        return stats.norm.logpdf(values, loc=theta) + stats.norm.logpdf(self.y[:, None], loc=values, scale=self.eps)

    def log_prior(self, theta):
        return float(stats.norm.logpdf(theta, scale=self.prior_sd))

    def sample_q_at(self, t, param, size, rng):
        return param + rng.standard_normal(size)

    def log_q_at(self, t, param, z):
        return stats.norm.logpdf(z, loc=param)

    def log_q_matrix(self, theta, vartheta, values):
        return stats.norm.logpdf(values, loc=self.bridge(theta, vartheta, self.latent_proposal))

    def log_marginal(self, theta):
        return float(np.sum(stats.norm.logpdf(self.y, loc=theta, scale=np.sqrt(1.0 + self.eps ** 2))))

    def sample_latent_posterior(self, theta, rng):
        """Exact draw of z from pi(z | theta, y)."""
        var = self.eps ** 2 / (1.0 + self.eps ** 2)
        mean = var * (theta + self.y / self.eps ** 2)
        return mean + np.sqrt(var) * rng.standard_normal(self.T)


class FiniteLatentModel(ProductLatentModel):
    """Enumerable instance: z_t on {0, 1, 2, 3} with l_theta(z) proportional to exp(theta * z),
    a fixed emission table and a uniform prior on a finite theta grid."""
    latent_dtype = int

    def __init__(self, y, grid=(-1.0, 0.0, 1.0), emission=None, gamma_mid='theta', latent_proposal=None):
        self.y = np.asarray(y, dtype=int)
        super(FiniteLatentModel, self).__init__(self.y.size, gamma_mid, latent_proposal)
        self.alphabet = np.arange(4)
        self.grid = [float(g) for g in grid]
        if emission is None:
            emission = np.full((4, 4), 0.1) + 0.6 * np.eye(4)
        self.log_emission = np.log(np.asarray(emission, dtype=float))

    def log_latent_prior(self, param, z):
        logits = param * self.alphabet
        return param * np.asarray(z) - logsumexp(logits)

    def log_gamma(self, t, theta, z):
        z = np.asarray(z)
        return self.log_latent_prior(theta, z) + self.log_emission[z, self.y[t]]

    def log_prior(self, theta):
        return -np.log(len(self.grid)) if theta in self.grid else -np.inf

    def sample_q_at(self, t, param, size, rng):
        probs = np.exp(self.log_latent_prior(param, self.alphabet))
        return rng.choice(self.alphabet, size=size, p=probs / probs.sum())

    def log_q_at(self, t, param, z):
        return self.log_latent_prior(param, z)

    def q_support_at(self, t, param):
        probs = np.exp(self.log_latent_prior(param, self.alphabet))
        return [(int(a), float(p)) for a, p in zip(self.alphabet, probs)]

    def states(self):
        return [(theta, z) for theta in self.grid
                for z in itertools.product(self.alphabet.tolist(), repeat=self.T)]

    def log_marginal(self, theta):
        return float(sum(logsumexp(self.log_gamma(t, theta, self.alphabet)) for t in range(self.T)))

    def exact_distribution(self, states=None):
        states = states or self.states()
        logp = np.array([self.log_density(theta, z) for theta, z in states])
        p = np.exp(logp - logsumexp(logp))
        return states, p


class ParticleMatrix(object):
    """T x M particle values; column 0 is the conditioned (current) path."""
    def __init__(self, values):
        self.values = np.asarray(values)
        if self.values.ndim != 2:
            raise ValueError('Particle matrix must be 2-D, got shape {}.'.format(self.values.shape))

    @property
    def T(self):
        return self.values.shape[0]

    @property
    def M(self):
        return self.values.shape[1]

    def path(self, k):
        k = check_path(k, self.T, self.M)
        return self.values[np.arange(self.T), k]

    def paths(self, ks):
        """Rows of an (N, T) array of index paths mapped to an (N, T) array of values."""
        ks = np.asarray(ks, dtype=int)
        if ks.ndim != 2 or ks.shape[1] != self.T:
            raise ValueError('Index paths must have shape (N, {}), got {}.'.format(self.T, ks.shape))
        if np.any(ks < 0) or np.any(ks >= self.M):
            raise ValueError('Index paths out of range for {} particles.'.format(self.M))
        return self.values[np.arange(self.T)[None, :], ks]

    def current(self):
        return self.values[:, 0]


def check_path(k, T, M):
    k = np.asarray(k, dtype=int)
    if k.shape != (T,):
        raise ValueError('Index path must have length {}, got shape {}.'.format(T, k.shape))
    if np.any(k < 0) or np.any(k >= M):
        raise ValueError('Index path {} out of range for {} particles.'.format(k.tolist(), M))
    return k


def swap_slots(v, k):
    """Swaps v^(1) and v^(k) row by row."""
    k = check_path(k, v.T, v.M)
    values = v.values.copy()
    rows = np.arange(v.T)
    values[rows, 0] = v.values[rows, k]
    values[rows, k] = v.values[rows, 0]
    return ParticleMatrix(values)


def relabel_path(l, k):
    """Index path that points, in swap_slots(v, k), at the particles l points at in v."""
    l = np.asarray(l, dtype=int)
    k = np.asarray(k, dtype=int)
    return np.where(l == 0, k, np.where(l == k, 0, l))


def all_paths(T, M):
    for k in itertools.product(range(M), repeat=T):
        yield np.array(k, dtype=int)


def path_log_prob(log_weights, k):
    """log of the product over rows of the normalised weight at k_t."""
    rows = np.arange(log_weights.shape[0])
    return float(np.sum(log_weights[rows, k] - logsumexp(log_weights, axis=1)))


def sample_path(log_weights, rng):
    """Independent per-row categorical draw; `rng` is a numpy Generator."""
    return categorical_rows(log_weights, rng)


def fill_particles(z, theta, vartheta, model, m, direction, rng):
    """Particle matrix with column 0 = z and columns 1..M-1 drawn iid from
    q_{t,theta,vartheta} ('fwd') or q_{t,vartheta,theta} ('bwd').

    `rng` is a RandomStreams node; row t draws from its child t.
    """
    if m < 1:
        raise ValueError('Number of particles must be at least 1, got {}.'.format(m))
    if direction not in ('fwd', 'bwd'):
        raise ValueError('Unknown fill direction {}.'.format(direction))
    z = np.asarray(z)
    a, b = (theta, vartheta) if direction == 'fwd' else (vartheta, theta)

    def row(t):
        return model.sample_q(t, a, b, m - 1, rng.child(t).generator())

    values = np.empty((model.T, m), dtype=model.latent_dtype)
    values[:, 0] = z
    if m > 1:
        values[:, 1:] = np.stack(parallel_map(row, range(model.T)))
    return ParticleMatrix(values)


def log_prefactor(theta, vartheta, model, q):
    """log of q(vartheta, theta) eta(vartheta) / (q(theta, vartheta) eta(theta))."""
    log_num = model.log_prior(vartheta) + q.log_density(vartheta, theta)
    if np.isneginf(log_num):
        return -np.inf
    return check_log(log_num - model.log_prior(theta) - q.log_density(theta, vartheta), 'prior-proposal prefactor')


class RowWeights(object):
    """Per-row log weights of one particle matrix for the move theta -> vartheta.

    Holds gamma_theta, gamma_vartheta, gamma_{theta,vartheta}, q_{theta,vartheta}
    and the reverse-direction bridge and proposal, so every selection law and
    ratio of the move reads from one cache.
    """
    def __init__(self, theta, vartheta, log_from, log_to, log_mid, log_q, log_mid_rev, log_q_rev,
                 log_pref, log_pref_rev=0.0):
        self.theta = theta
        self.vartheta = vartheta
        self.log_from = log_from
        self.log_to = log_to
        self.log_mid = log_mid
        self.log_q = log_q
        self.log_mid_rev = log_mid_rev
        self.log_q_rev = log_q_rev
        self.log_pref = log_pref
        self.log_pref_rev = log_pref_rev

    @classmethod
    def compute(cls, v, theta, vartheta, model, q=None):
        log_from = model.log_gamma_matrix(theta, v.values)
        log_to = model.log_gamma_matrix(vartheta, v.values)
        mid_fwd = model.bridge(theta, vartheta, model.gamma_mid)
        mid_rev = model.bridge(vartheta, theta, model.gamma_mid)
        log_mid = log_from if mid_fwd == theta else model.log_gamma_matrix(mid_fwd, v.values)
        if mid_rev == mid_fwd:
            log_mid_rev = log_mid
        else:
            log_mid_rev = log_to if mid_rev == vartheta else model.log_gamma_matrix(mid_rev, v.values)
        log_q = model.log_q_matrix(theta, vartheta, v.values)
        log_q_rev = model.log_q_matrix(vartheta, theta, v.values)
        log_pref = 0.0 if q is None else log_prefactor(theta, vartheta, model, q)
        log_pref_rev = 0.0 if q is None else log_prefactor(vartheta, theta, model, q)
        return cls(theta, vartheta, log_from, log_to, log_mid, log_q, log_mid_rev, log_q_rev, log_pref, log_pref_rev)

    def reverse(self):
        """The same cache read for the move vartheta -> theta."""
        return RowWeights(self.vartheta, self.theta, self.log_to, self.log_from, self.log_mid_rev,
                          self.log_q_rev, self.log_mid, self.log_q, self.log_pref_rev, self.log_pref)

    def swapped(self, k):
        """Weights of swap_slots(v, k) obtained by permuting columns."""
        rows = np.arange(self.log_from.shape[0])

        def swap(a):
            b = a.copy()
            b[rows, 0] = a[rows, k]
            b[rows, k] = a[rows, 0]
            return b

        return RowWeights(self.theta, self.vartheta, swap(self.log_from), swap(self.log_to), swap(self.log_mid),
                          swap(self.log_q), swap(self.log_mid_rev), swap(self.log_q_rev),
                          self.log_pref, self.log_pref_rev)

    @property
    def selection(self):
        """Single-path selection weights gamma_{theta,vartheta} / q_{theta,vartheta}."""
        return self.log_mid - self.log_q

    @property
    def selection_b1(self):
        return self.log_to - self.log_q

    @property
    def selection_b2(self):
        return self.log_mid_rev - self.log_q_rev

    def refresh_weights(self, coin):
        return self.log_from - (self.log_q if coin == 1 else self.log_q_rev)


def _log_r(w, l):
    """log r_{l,v}(theta, vartheta) from the cache `w` (read in its own direction)."""
    if np.isneginf(w.log_pref):
        return -np.inf
    rows = np.arange(w.log_from.shape[0])
    num = logsumexp(w.log_to - w.log_q, axis=1)
    if np.any(np.isneginf(num)):
        return -np.inf
    den = logsumexp(w.log_mid - w.log_q, axis=1)
    if np.any(np.isneginf(den)):
        raise NumericalContractError('Bridging weights vanish on a whole particle row.')
    sel = np.sum(w.log_mid[rows, l] - w.log_from[rows, l])
    return check_log(float(w.log_pref + sel + np.sum(num - den)), 'Rao-Blackwellised log-ratio')


def rb_log_ratio(v, l, theta, vartheta, model, q, weights=None):
    """log r_{l,v}(theta, vartheta), computed in O(MT)."""
    l = check_path(l, v.T, v.M)
    w = weights if weights is not None else RowWeights.compute(v, theta, vartheta, model, q)
    return _log_r(w, l)


def path_log_ratio(z, z_new, theta, vartheta, model, q):
    """log r_{z,z'}(theta, vartheta) of the single-path annealed move."""
    log_pref = log_prefactor(theta, vartheta, model, q)
    if np.isneginf(log_pref):
        return -np.inf
    z = np.asarray(z)
    z_new = np.asarray(z_new)
    total = log_pref
    for t in range(model.T):
        total += (model.log_gamma_mid(t, theta, vartheta, z[t]) - model.log_gamma(t, theta, z[t])
                  + model.log_gamma(t, vartheta, z_new[t]) - model.log_gamma_mid(t, theta, vartheta, z_new[t]))
    return check_log(float(total), 'path log-ratio')


def sample_path_b1(v, theta, vartheta, model, rng, weights=None):
    """k with per-row probabilities proportional to gamma_{t,vartheta} / q_{t,theta,vartheta}."""
    w = weights if weights is not None else RowWeights.compute(v, theta, vartheta, model)
    return sample_path(w.selection_b1, rng)


def sample_path_b2(v, theta, vartheta, model, rng, weights=None):
    """k from the single-path selection law of the reverse move vartheta -> theta."""
    w = weights if weights is not None else RowWeights.compute(v, theta, vartheta, model)
    return sample_path(w.selection_b2, rng)


class RbConfig(object):
    """Second-stage policy after a rejected parameter move: 'off', 'simple'
    (refreshment, requires gamma_mid='theta') or 'general' (delayed rejection)."""
    def __init__(self, refresh='off'):
        if refresh not in REFRESH_MODES:
            raise ValueError('Unknown refresh mode {}; expected one of {}.'.format(refresh, REFRESH_MODES))
        self.refresh = refresh


def refresh_latent(v, k_used, theta, vartheta, coin, model, rng, weights=None):
    """Draws l from the refreshment law of coin `coin` and returns v^(l).

    Only valid when the bridge is gamma_theta; then the second stage always
    accepts. `k_used` is the stage-one path and does not affect the draw.
    """
    if model.gamma_mid != 'theta':
        raise ValueError('Refreshment with certain acceptance needs gamma_mid=theta; '
                         'use delayed_rejection_general for bridge {}.'.format(model.gamma_mid))
    w = weights if weights is not None else RowWeights.compute(v, theta, vartheta, model)
    return v.path(sample_path(w.refresh_weights(coin), rng))


def _dr_log_ratio(w, k, l, coin):
    """log of the second-stage ratio (1 - min{1, r'}) / (1 - min{1, r}) for refreshing to v^(l)."""
    T = w.log_from.shape[0]
    if coin == 1:
        log_stage1 = _log_r(w, np.zeros(T, dtype=int))
        log_image = _log_r(w, l)
    else:
        log_stage1 = -_log_r(w.reverse(), k)
        log_image = -_log_r(w.swapped(l).reverse(), relabel_path(k, l))
    if log_stage1 >= 0.0:
        raise NumericalContractError('Delayed rejection called after a stage that accepts with certainty.')
    log_den = np.log1p(-np.exp(log_stage1))
    if log_image >= 0.0:
        return -np.inf
    return float(np.log1p(-np.exp(log_image)) - log_den)


def delayed_rejection_general(v, k, l, theta, vartheta, coin, model, q, rng, weights=None):
    """Second stage after a rejected move: propose (theta, v^(l)) and accept with
    (1 - min{1, r_{l,v}}) / (1 - min{1, r_{1,v}}) for c=1, mirrored for c=2.

    `k` is the stage-one path (unused for c=1); `rng` is a numpy Generator.
    """
    l = check_path(l, v.T, v.M)
    if k is not None:
        k = check_path(k, v.T, v.M)
    w = weights if weights is not None else RowWeights.compute(v, theta, vartheta, model, q)
    log_ratio = _dr_log_ratio(w, k, l, coin)
    if accept_decision(log_ratio, rng):
        return MhOutcome((theta, v.path(l)), True, log_ratio, coin, refreshed=True)
    return MhOutcome((theta, v.current()), False, log_ratio, coin)


def _second_stage(v, k, theta, vartheta, z, coin, model, q, w, cfg, gen, log_r):
    if cfg.refresh == 'off':
        return MhOutcome((theta, z), False, log_r, coin)
    if cfg.refresh == 'simple':
        z_new = refresh_latent(v, k, theta, vartheta, coin, model, gen, weights=w)
        return MhOutcome((theta, z_new), False, log_r, coin, refreshed=True)
    l = sample_path(w.refresh_weights(coin), gen)
    out = delayed_rejection_general(v, k, l, theta, vartheta, coin, model, q, gen, weights=w)
    return MhOutcome(out.next_state if out.refreshed else (theta, z), False, log_r, coin, out.refreshed)


def mhaar_rb_step(theta, z, model, q, m, cfg, rng):
    """One Rao-Blackwellised averaged-ratio move from (theta, z).

    c=1 fills forward and accepts with r_{1,v}(theta, vartheta), drawing k
    from b^(1) only on acceptance. c=2 fills backward, draws k from b^(2)
    and accepts with 1 / r_{k,v}(vartheta, theta).
    `rng` is a RandomStreams node: child 0 drives the sequential draws and
    child 1 the particle rows.
    """
    cfg = cfg or RbConfig()
    gen = rng.child(0).generator()
    vartheta = q.sample(theta, gen)
    coin = 1 if gen.random() < 0.5 else 2
    v = fill_particles(z, theta, vartheta, model, m, 'fwd' if coin == 1 else 'bwd', rng.child(1))
    w = RowWeights.compute(v, theta, vartheta, model, q)

    if coin == 1:
        k = None
        log_r = _log_r(w, np.zeros(model.T, dtype=int))
        if accept_decision(log_r, gen):
            k = sample_path(w.selection_b1, gen)
            return MhOutcome((vartheta, v.path(k)), True, log_r, coin)
    else:
        k = sample_path(w.selection_b2, gen)
        log_r = -_log_r(w.reverse(), k)
        if accept_decision(log_r, gen):
            return MhOutcome((vartheta, v.path(k)), True, log_r, coin)
    return _second_stage(v, k, theta, vartheta, z, coin, model, q, w, cfg, gen, log_r)


def ais_mcmc_step(theta, z, model, q, m, rng):
    """Single-path annealed move: k ~ b_{theta,vartheta}(.|v), accept with r_{v^(1), v^(k)}.

    Needs a bridge and latent proposal symmetric in (theta, vartheta), i.e. the midpoint modes.
    """
    if not model.symmetric_bridge():
        raise ValueError('AIS-MCMC needs midpoint bridge and latent proposal, got {} and {}.'
                         .format(model.gamma_mid, model.latent_proposal))
    gen = rng.child(0).generator()
    vartheta = q.sample(theta, gen)
    v = fill_particles(z, theta, vartheta, model, m, 'fwd', rng.child(1))
    w = RowWeights.compute(v, theta, vartheta, model, q)
    k = sample_path(w.selection, gen)
    log_r = _ais_log_ratio(w, k)
    if accept_decision(log_r, gen):
        return MhOutcome((vartheta, v.path(k)), True, log_r)
    return MhOutcome((theta, z), False, log_r)


def _ais_log_ratio(w, k):
    if np.isneginf(w.log_pref):
        return -np.inf
    rows = np.arange(w.log_from.shape[0])
    total = (w.log_pref + np.sum(w.log_mid[:, 0] - w.log_from[:, 0])
             + np.sum(w.log_to[rows, k] - w.log_mid[rows, k]))
    return check_log(float(total), 'AIS log-ratio')


def _state_key(theta, z):
    return theta, tuple(np.asarray(z).tolist())


def _enumerate_fills(z, theta, vartheta, model, m, direction):
    """Every particle matrix reachable from z with its probability."""
    a, b = (theta, vartheta) if direction == 'fwd' else (vartheta, theta)
    z = np.asarray(z)
    cells = []
    for t in range(model.T):
        support = model.q_support(t, a, b)
        if support is None:
            raise ValueError('Exact enumeration needs a finite latent proposal.')
        cells.extend([support] * (m - 1))
    for combo in itertools.product(*cells):
        values = np.empty((model.T, m), dtype=model.latent_dtype)
        values[:, 0] = z
        if m > 1:
            values[:, 1:] = np.array([c for c, _ in combo]).reshape(model.T, m - 1)
        yield ParticleMatrix(values), float(np.prod([p for _, p in combo]))


def _enumerate_second_stage(out, v, k, theta, z, coin, w, cfg, mass):
    if mass <= 0.0:
        return
    if cfg.refresh == 'off':
        out[_state_key(theta, z)] += mass
        return
    log_w = w.refresh_weights(coin)
    for l in all_paths(v.T, v.M):
        p_l = mass * np.exp(path_log_prob(log_w, l))
        if cfg.refresh == 'simple':
            out[_state_key(theta, v.path(l))] += p_l
            continue
        a = accept_prob(_dr_log_ratio(w, k, l, coin))
        out[_state_key(theta, v.path(l))] += p_l * a
        out[_state_key(theta, z)] += p_l * (1.0 - a)


def mhaar_rb_transition_probs(state, model, q, m, cfg=None):
    """Exact law of `mhaar_rb_step` (with its second stage) on a finite instance."""
    cfg = cfg or RbConfig()
    theta, z = state
    out = defaultdict(float)
    for vartheta, q_prob in q.support(theta):
        for coin in (1, 2):
            for v, p_v in _enumerate_fills(z, theta, vartheta, model, m, 'fwd' if coin == 1 else 'bwd'):
                mass = 0.5 * q_prob * p_v
                w = RowWeights.compute(v, theta, vartheta, model, q)
                if coin == 1:
                    a = accept_prob(_log_r(w, np.zeros(model.T, dtype=int)))
                    for k in all_paths(model.T, m):
                        out[_state_key(vartheta, v.path(k))] += mass * a * np.exp(path_log_prob(w.selection_b1, k))
                    _enumerate_second_stage(out, v, None, theta, z, coin, w, cfg, mass * (1.0 - a))
                else:
                    for k in all_paths(model.T, m):
                        p_k = mass * np.exp(path_log_prob(w.selection_b2, k))
                        a = accept_prob(-_log_r(w.reverse(), k))
                        out[_state_key(vartheta, v.path(k))] += p_k * a
                        _enumerate_second_stage(out, v, k, theta, z, coin, w, cfg, p_k * (1.0 - a))
    return dict(out)


def ais_mcmc_transition_probs(state, model, q, m):
    """Exact law of `ais_mcmc_step` on a finite instance."""
    theta, z = state
    out = defaultdict(float)
    for vartheta, q_prob in q.support(theta):
        for v, p_v in _enumerate_fills(z, theta, vartheta, model, m, 'fwd'):
            w = RowWeights.compute(v, theta, vartheta, model, q)
            for k in all_paths(model.T, m):
                p_k = q_prob * p_v * np.exp(path_log_prob(w.selection, k))
                a = accept_prob(_ais_log_ratio(w, k))
                out[_state_key(vartheta, v.path(k))] += p_k * a
                out[_state_key(theta, z)] += p_k * (1.0 - a)
    return dict(out)


def latent_kernel(model, q, m, kind='rb', cfg=None, exact=False):
    """Step function over hashable (theta, tuple(z)) states, with its exact law attached if `exact`."""
    if kind not in ('rb', 'ais'):
        raise ValueError('Unknown latent kernel {}.'.format(kind))

    def step(state, rng):
        if kind == 'rb':
            out = mhaar_rb_step(state[0], state[1], model, q, m, cfg, rng)
        else:
            out = ais_mcmc_step(state[0], state[1], model, q, m, rng)
        return _state_key(*out.next_state)

    if exact:
        if kind == 'rb':
            step.transition_probs = lambda state: mhaar_rb_transition_probs(state, model, q, m, cfg)
        else:
            step.transition_probs = lambda state: ais_mcmc_transition_probs(state, model, q, m)
    return step
