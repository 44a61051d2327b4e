"""Contains state-space models, the bootstrap conditional particle filter with
backward sampling and the likelihood oracles used to check it."""
import itertools

import numpy as np
from scipy import stats
from scipy.special import logsumexp, softmax

from kernels.core import TargetModel
from kernels.latent_rb import ParticleMatrix, check_path
from util import LOG_WEIGHT_FLOOR, NumericalContractError, check_log, inverse_cdf_rows, multinomial_indices


class SsmModel(TargetModel):
    """Bootstrap state-space model: f_theta(z_1), f_theta(z_{t-1}, z_t), g_theta(z_t, y_t).

    Densities broadcast over array arguments; samplers take a numpy Generator.
    """
    latent_dtype = float

    def __init__(self, y):
        super(SsmModel, self).__init__()
        self.y = np.asarray(y)
        self.T = self.y.shape[0]

    def log_f_init(self, theta, z):
        raise NotImplementedError

    def sample_init(self, theta, size, rng):
        raise NotImplementedError

    def log_f_trans(self, theta, z_prev, z):
        raise NotImplementedError

    def sample_trans(self, theta, z_prev, rng):
        raise NotImplementedError

    def log_g_obs(self, theta, z, t):
        raise NotImplementedError

    def log_obs_matrix(self, theta, values):
        """log g_theta(v_t^(i), y_t) for a (T, M) array of particle values."""
        return np.stack([self.log_g_obs(theta, values[t], t) for t in range(self.T)])

    def log_trans_matrices(self, theta, values):
        """log f_theta(v_{t-1}^(i), v_t^(j)) for t = 1..T-1 as a (T-1, M, M) array."""
        return self.log_f_trans(theta, values[:-1, :, None], values[1:, None, :])

    def log_prior(self, theta):
        raise NotImplementedError

    def log_joint_paths(self, theta, paths):
        """log p_theta(z, y) for every row of an (N, T) array of paths."""
        paths = np.asarray(paths)
        total = self.log_f_init(theta, paths[:, 0]) + self.log_obs_matrix(theta, paths.T).sum(axis=0)
        if self.T > 1:
            total = total + self.log_f_trans(theta, paths[:, :-1], paths[:, 1:]).sum(axis=1)
        return np.asarray(total, dtype=float)

    def log_joint(self, theta, z):
        """log p_theta(z, y)."""
        return float(self.log_joint_paths(theta, np.asarray(z)[None])[0])

    def log_density(self, theta, z):
        log_p = self.log_prior(theta)
        if np.isneginf(log_p):
            return -np.inf
        return log_p + self.log_joint(theta, z)

    def sample_path(self, theta, size, rng):
        """`size` latent paths from the prior dynamics, shape (size, T)."""
        paths = np.empty((size, self.T), dtype=self.latent_dtype)
        paths[:, 0] = self.sample_init(theta, size, rng)
        for t in range(1, self.T):
            paths[:, t] = self.sample_trans(theta, paths[:, t - 1], rng)
        return paths


class LinearGaussianSsm(SsmModel):
    """Z_1 ~ N(0, sz2), Z_t = phi (Z_{t-1} - (1-a) theta) + (1-a) theta + V_t,
    Y_t = Z_t + a theta + W_t with V_t ~ N(0, (1 - phi^2) sz2) and W_t ~ N(0, sy2).
    The prior on theta is N(0, prior_var)."""
    def __init__(self, y, a=1.0, phi=0.95, sigma_z2=1.0, sigma_y2=0.1, prior_var=1e4):
        super(LinearGaussianSsm, self).__init__(np.asarray(y, dtype=float))
        if not (sigma_z2 > 0.0 and sigma_y2 > 0.0):
            raise ValueError('Noise variances must be positive, got {} and {}.'.format(sigma_z2, sigma_y2))
        if not abs(phi) < 1.0:
            raise ValueError('Autoregression coefficient must satisfy |phi| < 1, got {}.'.format(phi))
        self.a = a
        self.phi = phi
        self.sigma_z2 = sigma_z2
        self.sigma_y2 = sigma_y2
        self.prior_var = prior_var
        self.trans_sd = np.sqrt((1.0 - phi ** 2) * sigma_z2)

    @classmethod
    def simulate(cls, theta, T, rng, **kwargs):
        model = cls(np.zeros(T), **kwargs)
        z = model.sample_path(theta, 1, rng)[0]
        y = z + model.a * theta + np.sqrt(model.sigma_y2) * rng.standard_normal(T)
        return cls(y, **kwargs)

    def _trans_mean(self, theta, z_prev):
        shift = (1.0 - self.a) * theta
        return self.phi * (z_prev - shift) + shift

    def log_f_init(self, theta, z):
        return stats.norm.logpdf(z, scale=np.sqrt(self.sigma_z2))

    def sample_init(self, theta, size, rng):
        return np.sqrt(self.sigma_z2) * rng.standard_normal(size)

    def log_f_trans(self, theta, z_prev, z):
        return stats.norm.logpdf(z, loc=self._trans_mean(theta, z_prev), scale=self.trans_sd)

    def sample_trans(self, theta, z_prev, rng):
        z_prev = np.asarray(z_prev, dtype=float)
        return self._trans_mean(theta, z_prev) + self.trans_sd * rng.standard_normal(z_prev.shape)

    def log_g_obs(self, theta, z, t):
        return stats.norm.logpdf(self.y[t], loc=np.asarray(z) + self.a * theta, scale=np.sqrt(self.sigma_y2))

    def log_obs_matrix(self, theta, values):
        return stats.norm.logpdf(self.y[:, None], loc=np.asarray(values, dtype=float) + self.a * theta,
                                 scale=np.sqrt(self.sigma_y2))

    def log_prior(self, theta):
        return float(stats.norm.logpdf(theta, scale=np.sqrt(self.prior_var)))

    def kalman_loglik(self, theta):
        return kalman_loglik(self, theta, self.y)


class FiniteSsm(SsmModel):
    """Enumerable instance: latent and observed alphabet {0, 1, 2}, sticky
    transitions whose stickiness and emission sharpness depend on theta, and a
    uniform prior on a finite theta grid."""
    latent_dtype = int

    def __init__(self, y, grid=(-1.0, 0.0, 1.0)):
        super(FiniteSsm, self).__init__(np.asarray(y, dtype=int))
        self.alphabet = np.arange(3)
        self.grid = [float(g) for g in grid]

    def _log_init(self, theta):
        return np.log(softmax(0.5 * theta * self.alphabet))

    def _log_trans(self, theta):
        return np.log(softmax((1.0 + theta) * np.eye(3), axis=1))

    def _log_emit(self, theta):
        return np.log(softmax((1.5 + 0.5 * theta) * np.eye(3), axis=1))

    def log_f_init(self, theta, z):
        return self._log_init(theta)[np.asarray(z)]

    def sample_init(self, theta, size, rng):
        return rng.choice(self.alphabet, size=size, p=np.exp(self._log_init(theta)))

    def log_f_trans(self, theta, z_prev, z):
        return self._log_trans(theta)[np.asarray(z_prev), np.asarray(z)]

    def sample_trans(self, theta, z_prev, rng):
        cum = np.cumsum(np.exp(self._log_trans(theta)), axis=1)[np.asarray(z_prev)]
        u = rng.random(cum.shape[0])
        return np.minimum((cum < u[:, None]).sum(axis=1), 2)

    def log_g_obs(self, theta, z, t):
        return self._log_emit(theta)[np.asarray(z), self.y[t]]

    def log_obs_matrix(self, theta, values):
        return self._log_emit(theta)[np.asarray(values), self.y[:, None]]

    def log_prior(self, theta):
        return -np.log(len(self.grid)) if theta in self.grid else -np.inf

    def states(self):
        return [(theta, z) for theta in self.grid
                for z in itertools.product(self.alphabet.tolist(), repeat=self.T)]

    def log_evidence(self, theta):
        paths = np.array(list(itertools.product(self.alphabet.tolist(), repeat=self.T)), dtype=int)
        return float(logsumexp(self.log_joint_paths(theta, paths)))

    def exact_distribution(self, states=None):
        states = states or self.states()
        logp = np.array([self.log_density(theta, z) for theta, z in states])
        return states, np.exp(logp - logsumexp(logp))


class CsmcOutput(object):
    """Particles of one (conditional) particle filter run and their log weights at `theta`.

    Observation weights and transition arrays at other parameters are computed
    once per parameter and cached.
    """
    def __init__(self, particles, log_weights, theta):
        self.particles = particles
        self.log_weights = np.asarray(log_weights, dtype=float)
        self.theta = theta
        self._obs = {theta: self.log_weights}
        self._trans = {}

    @property
    def T(self):
        return self.particles.T

    @property
    def M(self):
        return self.particles.M

    def obs_weights(self, theta, model):
        if theta not in self._obs:
            self._obs[theta] = model.log_obs_matrix(theta, self.particles.values)
        return self._obs[theta]

    def transitions(self, theta, model):
        if theta not in self._trans:
            self._trans[theta] = model.log_trans_matrices(theta, self.particles.values)
        return self._trans[theta]


def _check_slice(log_w, t):
    if np.max(log_w) < LOG_WEIGHT_FLOOR:
        raise NumericalContractError('All particle weights vanish at t={} (max log-weight {:.1f}).'
                                     .format(t, float(np.max(log_w))))


def _particle_filter(m, theta, z, model, rng):
    """Bootstrap filter with multinomial resampling; z pins column 0 when given.

    `rng` is a RandomStreams node and step t draws from its child t.
    """
    if m < 1:
        raise ValueError('Number of particles must be at least 1, got {}.'.format(m))
    first = 0 if z is None else 1
    if z is not None:
        z = np.asarray(z)
        if z.shape[0] != model.T:
            raise ValueError('Conditioning path has length {}, expected {}.'.format(z.shape[0], model.T))
    values = np.empty((model.T, m), dtype=model.latent_dtype)
    log_w = np.empty((model.T, m))

    gen = rng.child(0).generator()
    if z is not None:
        values[0, 0] = z[0]
    values[0, first:] = model.sample_init(theta, m - first, gen)
    log_w[0] = check_log(model.log_g_obs(theta, values[0], 0), 'observation log-density')
    _check_slice(log_w[0], 0)

    for t in range(1, model.T):
        gen = rng.child(t).generator()
        ancestors = multinomial_indices(log_w[t - 1], m - first, gen)
        if z is not None:
            values[t, 0] = z[t]
        values[t, first:] = model.sample_trans(theta, values[t - 1, ancestors], gen)
        log_w[t] = check_log(model.log_g_obs(theta, values[t], t), 'observation log-density')
        _check_slice(log_w[t], t)
    return CsmcOutput(ParticleMatrix(values), log_w, theta)


def csmc(m, theta, z, model, rng):
    """Conditional bootstrap particle filter with column 0 pinned to z."""
    if z is None:
        raise ValueError('Conditional filter needs a conditioning path.')
    return _particle_filter(m, theta, z, model, rng)


def smc_log_evidence(m, theta, model, rng):
    """log of the unconditional estimate prod_t (1/M) sum_i w_t(v_t^(i))."""
    out = _particle_filter(m, theta, None, model, rng)
    return float(np.sum(logsumexp(out.log_weights, axis=1) - np.log(m)))


def weights_at(out, theta, model):
    """log w_{t,theta}(v_t^(i)), reusing the cached weights when theta matches the run."""
    return out.obs_weights(theta, model)


def predictive_log_mix(out, theta, model):
    """log sum_i w_{t-1}(v_{t-1}^(i)) f_theta(v_{t-1}^(i), v_t^(j)) for t = 2..T, shape (T-1, M)."""
    log_w = weights_at(out, theta, model)
    return logsumexp(log_w[:-1, :, None] + out.transitions(theta, model), axis=1)


def backward_sample_paths(out, theta, model, uniforms):
    """Index paths by backward sampling, one per row of an (N, T) array of uniforms.

    Row n picks k_T from w_T at uniforms[n, T-1], then k_t from
    w_t f_theta(., v_{t+1}^(k_{t+1})) at uniforms[n, t].
    """
    uniforms = np.atleast_2d(uniforms)
    if uniforms.shape[1] != out.T:
        raise ValueError('Need {} uniforms per path, got {}.'.format(out.T, uniforms.shape[1]))
    log_w = weights_at(out, theta, model)
    n, T = uniforms.shape[0], out.T
    k = np.empty((n, T), dtype=int)
    k[:, T - 1] = inverse_cdf_rows(np.broadcast_to(log_w[T - 1], (n, out.M)), uniforms[:, T - 1])
    if T > 1:
        trans = out.transitions(theta, model)
    for t in range(T - 2, -1, -1):
        k[:, t] = inverse_cdf_rows(log_w[t][None, :] + trans[t][:, k[:, t + 1]].T, uniforms[:, t])
    return k


def backward_sample(out, theta, model, rng):
    """Draws k_T proportional to w_T, then k_t proportional to w_t f_theta(., v_{t+1}^(k_{t+1})).

    `rng` is a numpy Generator.
    """
    return backward_sample_paths(out, theta, model, rng.random((1, out.T)))[0]


def backward_log_prob(out, theta, k, model):
    """log b_theta(k | v) as the product of normalised backward factors."""
    k = check_path(k, out.T, out.M)
    log_w = weights_at(out, theta, model)
    T = out.T
    total = log_w[T - 1, k[T - 1]] - logsumexp(log_w[T - 1])
    if T > 1:
        steps = np.arange(T - 1)
        logits = log_w[:-1] + out.transitions(theta, model)[steps, :, k[1:]]
        total += np.sum(logits[steps, k[:-1]] - logsumexp(logits, axis=1))
    return float(total)


def _predictive_log_densities(v, theta, model):
    out = CsmcOutput(v, model.log_obs_matrix(theta, v.values), theta)
    return predictive_log_mix(out, theta, model) - logsumexp(out.log_weights[:-1], axis=1)[:, None]


def csmc_log_density(v, theta, model):
    """log Phi_theta(z, u): density of columns 1..M-1 of v given column 0 under the conditional filter."""
    total = float(np.sum(model.log_f_init(theta, v.values[0, 1:])))
    if v.T > 1:
        total += float(np.sum(_predictive_log_densities(v, theta, model)[:, 1:]))
    return total


def smc_log_density(v, theta, model):
    """log psi_theta(v): density of all M columns under the unconditional filter, ancestry integrated out."""
    total = float(np.sum(model.log_f_init(theta, v.values[0])))
    if v.T > 1:
        total += float(np.sum(_predictive_log_densities(v, theta, model)))
    return total


def importance_loglik(theta, model, n, rng):
    """Naive importance-sampling estimate of log l_theta(y) from `n` prior-dynamics paths.

    Returns (estimate, standard error of the likelihood estimate relative to its mean).
    """
    paths = model.sample_path(theta, n, rng)
    log_g = model.log_obs_matrix(theta, paths.T).sum(axis=0)
    est = logsumexp(log_g) - np.log(n)
    rel = np.exp(log_g - est)
    return float(est), float(rel.std(ddof=1) / np.sqrt(n))


def kalman_loglik(lg, theta, y):
    """Exact log l_theta(y) of the linear-Gaussian model by the predict / update recursion."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)) or not np.isfinite(theta):
        raise ValueError('Kalman recursion needs finite observations and parameter.')
    shift = (1.0 - lg.a) * theta
    mean, var = 0.0, lg.sigma_z2
    total = 0.0
    for t in range(y.size):
        s = var + lg.sigma_y2
        resid = y[t] - mean - lg.a * theta
        total += -0.5 * (np.log(2.0 * np.pi * s) + resid * resid / s)
        gain = var / s
        mean, var = mean + gain * resid, (1.0 - gain) * var
        mean = lg.phi * (mean - shift) + shift
        var = lg.phi ** 2 * var + (1.0 - lg.phi ** 2) * lg.sigma_z2
    return float(total)


class ZetaSchedule(object):
    """Intermediate parameters zeta_1(theta, vartheta) and zeta_2(theta, vartheta).

    Both maps are stored as given; a valid schedule has
    zeta_1(theta, vartheta) = zeta_2(vartheta, theta), which `check_symmetry`
    tests on sample pairs.
    """
    def __init__(self, zeta1, zeta2, name='custom'):
        self.zeta1 = zeta1
        self.zeta2 = zeta2
        self.name = name

    def zeta(self, coin, theta, vartheta):
        return self.zeta1(theta, vartheta) if coin == 1 else self.zeta2(theta, vartheta)

    def check_symmetry(self, samples):
        for theta, vartheta in samples:
            if self.zeta1(theta, vartheta) != self.zeta2(vartheta, theta):
                raise ValueError('Schedule {} is not symmetric at ({}, {}): zeta_1 gives {}, zeta_2 gives {}.'
                                 .format(self.name, theta, vartheta, self.zeta1(theta, vartheta),
                                         self.zeta2(vartheta, theta)))
        return True

    @classmethod
    def theta(cls):
        return cls(lambda theta, vartheta: theta, lambda theta, vartheta: vartheta, 'theta')

    @classmethod
    def midpoint(cls):
        return cls(lambda theta, vartheta: 0.5 * (theta + vartheta),
                   lambda theta, vartheta: 0.5 * (vartheta + theta), 'midpoint')

    @classmethod
    def from_name(cls, name):
        if name not in ('theta', 'midpoint'):
            raise ValueError('Unknown zeta schedule {}.'.format(name))
        return getattr(cls, name)()
