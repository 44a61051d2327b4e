"""Contains the generic averaged-acceptance-ratio MH kernel and its exact transition law."""
import itertools
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import softmax

from kernels.core import MhOutcome, accept_decision, accept_prob
from util import categorical, check_log, log_mean_exp, parallel_map


def half_coin(theta, vartheta, z, c):
    return 0.5


class MhaarConfig(object):
    """Number of replicates N and the coin weight omega(theta, vartheta, z, c).

    Set `omega_uses_z` when omega reads z: the c=1 ratio then depends on the
    selected replicate through omega(vartheta, theta, z', 2), so k is drawn
    before the decision. `eager_k` forces that order for any omega.
    """
    def __init__(self, n_replicates=1, coin_weight=None, eager_k=False, omega_uses_z=False):
        if n_replicates < 1:
            raise ValueError('Number of replicates must be at least 1, got {}.'.format(n_replicates))
        self.n_replicates = int(n_replicates)
        self.coin_weight = coin_weight or half_coin
        self.eager_k = eager_k
        self.omega_uses_z = omega_uses_z

    def omega(self, theta, vartheta, z, c):
        return self.coin_weight(theta, vartheta, z, c)

    def check_omega(self, samples, tol=1e-12):
        """Checks omega(., 1) + omega(., 2) = 1 on (theta, vartheta, z) samples."""
        for theta, vartheta, z in samples:
            w1 = self.omega(theta, vartheta, z, 1)
            w2 = self.omega(theta, vartheta, z, 2)
            if abs(w1 + w2 - 1.0) > tol or not (0.0 <= w1 <= 1.0):
                raise ValueError('Coin weights {} and {} at ({}, {}) do not form a distribution.'
                                 .format(w1, w2, theta, vartheta))
        return True


@dataclass
class RatioBundle:
    log_ratios: np.ndarray
    log_average: float
    selected_index: Optional[int] = None


def averaged_log_ratio(log_ratios, omega_fwd=0.5, omega_bwd=0.5):
    """log[(omega_bwd / omega_fwd) * (1/N) * sum exp(log_ratios)].

    A zero reverse coin weight makes the move impossible to undo, so it gives -inf.
    """
    if not 0.0 < omega_fwd <= 1.0:
        raise ValueError('Forward coin weight {} outside (0, 1].'.format(omega_fwd))
    if not 0.0 <= omega_bwd <= 1.0:
        raise ValueError('Reverse coin weight {} outside [0, 1].'.format(omega_bwd))
    avg = log_mean_exp(log_ratios)
    if np.isneginf(avg) or omega_bwd == 0.0:
        return -np.inf
    return avg + np.log(omega_bwd) - np.log(omega_fwd)


def inverse_averaged_log_ratio(log_ratios, omega_rev, omega_fwd):
    """Log acceptance ratio of the c=2 branch: the inverse of the reverse-direction average.

    `omega_rev` is omega(vartheta, theta, z', 1) and `omega_fwd` is
    omega(theta, vartheta, z, 2).
    """
    if omega_rev == 0.0:
        return -np.inf
    return -averaged_log_ratio(log_ratios, omega_rev, omega_fwd)


def sample_proportional(log_weights, rng):
    """Index k with probability exp(log_w_k) / sum_j exp(log_w_j)."""
    log_weights = np.asarray(log_weights, dtype=float)
    if log_weights.size == 0:
        raise ValueError('Cannot sample from an empty weight vector.')
    return categorical(log_weights, rng)


def _draw_forward(scheme, theta, vartheta, z, rng, i):
    gen = rng.child(1, i).generator()
    u = scheme.sample_u(theta, vartheta, z, gen)
    return u, check_log(scheme.log_ratio(theta, vartheta, z, u), 'scheme log-ratio')


def mhaar_step(theta, z, model, q, scheme, cfg, rng):
    """One MHAAR transition from (theta, z).

    `rng` is a RandomStreams node for this step. Sequential draws (proposal,
    coin, decision, selection) use child 0; replicate i draws from child (1, i).
    """
    n = cfg.n_replicates
    gen = rng.child(0).generator()
    vartheta = q.sample(theta, gen)
    w1 = cfg.omega(theta, vartheta, z, 1)
    c = 1 if gen.random() < w1 else 2

    if c == 1:
        draws = parallel_map(lambda i: _draw_forward(scheme, theta, vartheta, z, rng, i), range(n))
        us = [u for u, _ in draws]
        bundle = RatioBundle(np.array([lr for _, lr in draws]), -np.inf)
        if np.all(np.isneginf(bundle.log_ratios)):
            return MhOutcome((theta, z), False, -np.inf, c)

        z_new = None
        omega_z = z
        if cfg.eager_k or cfg.omega_uses_z:
            bundle.selected_index = sample_proportional(bundle.log_ratios, gen)
            z_new = scheme.phi1(theta, vartheta, z, us[bundle.selected_index])
            omega_z = z_new
        bundle.log_average = averaged_log_ratio(bundle.log_ratios, w1, cfg.omega(vartheta, theta, omega_z, 2))

        if not accept_decision(bundle.log_average, gen):
            return MhOutcome((theta, z), False, bundle.log_average, c)
        if bundle.selected_index is None:
            bundle.selected_index = sample_proportional(bundle.log_ratios, gen)
            z_new = scheme.phi1(theta, vartheta, z, us[bundle.selected_index])
        return MhOutcome((vartheta, z_new), True, bundle.log_average, c)

    k = int(gen.integers(n))
    u_k = scheme.sample_u(theta, vartheta, z, rng.child(1, k).generator())
    z_new = scheme.phi1(theta, vartheta, z, u_k)
    u_rev = scheme.phi2(theta, vartheta, z, u_k)

    def reverse(i):
        if i == k:
            return check_log(scheme.log_ratio(vartheta, theta, z_new, u_rev), 'scheme log-ratio')
        return _draw_forward(scheme, vartheta, theta, z_new, rng, i)[1]

    log_ratios = np.array(parallel_map(reverse, range(n)))
    log_r = inverse_averaged_log_ratio(log_ratios,
                                       cfg.omega(vartheta, theta, z_new, 1),
                                       cfg.omega(theta, vartheta, z, 2))
    if accept_decision(log_r, gen):
        return MhOutcome((vartheta, z_new), True, log_r, c)
    return MhOutcome((theta, z), False, log_r, c)


def _support_tuples(support, n):
    for combo in itertools.product(support, repeat=n):
        yield [u for u, _ in combo], float(np.prod([p for _, p in combo]))


def mhaar_transition_probs(state, q, scheme, cfg):
    """Exact transition law of `mhaar_step` when q and every Q have finite support.

    Under c=2 the replicate index k is uniform and the reverse draws are
    exchangeable, so slot 0 stands in for every k.
    """
    theta, z = state
    n = cfg.n_replicates
    out = defaultdict(float)
    for vartheta, q_prob in q.support(theta):
        w1 = cfg.omega(theta, vartheta, z, 1)

        if w1 > 0.0:
            support = scheme.u_support(theta, vartheta, z)
            for us, p in _support_tuples(support, n):
                mass = q_prob * w1 * p
                lrs = np.array([scheme.log_ratio(theta, vartheta, z, u) for u in us])
                if np.all(np.isneginf(lrs)):
                    out[(theta, z)] += mass
                    continue
                b = softmax(lrs)
                for k in range(n):
                    z_new = scheme.phi1(theta, vartheta, z, us[k])
                    omega_z = z_new if cfg.omega_uses_z else z
                    a = accept_prob(averaged_log_ratio(lrs, w1, cfg.omega(vartheta, theta, omega_z, 2)))
                    out[(vartheta, z_new)] += mass * b[k] * a
                    out[(theta, z)] += mass * b[k] * (1.0 - a)

        w2 = 1.0 - w1
        if w2 > 0.0:
            for u_k, p_k in scheme.u_support(theta, vartheta, z):
                z_new = scheme.phi1(theta, vartheta, z, u_k)
                lr_k = scheme.log_ratio(vartheta, theta, z_new, scheme.phi2(theta, vartheta, z, u_k))
                rev_support = scheme.u_support(vartheta, theta, z_new)
                for us, p in _support_tuples(rev_support, n - 1):
                    mass = q_prob * w2 * p_k * p
                    lrs = np.array([lr_k] + [scheme.log_ratio(vartheta, theta, z_new, u) for u in us])
                    a = accept_prob(inverse_averaged_log_ratio(lrs, cfg.omega(vartheta, theta, z_new, 1),
                                                               cfg.omega(theta, vartheta, z, 2)))
                    out[(vartheta, z_new)] += mass * a
                    out[(theta, z)] += mass * (1.0 - a)
    return dict(out)


def mhaar_kernel(model, q, scheme, cfg, exact=True):
    """Returns a step function over (theta, z) states, with its exact law attached if `exact`."""
    def step(state, rng):
        return mhaar_step(state[0], state[1], model, q, scheme, cfg, rng).next_state

    def probs(state):
        if q.support(state[0]) is None:
            raise ValueError('Exact transition law needs a finite proposal.')
        return mhaar_transition_probs(state, q, scheme, cfg)

    if exact:
        step.transition_probs = probs
    return step
