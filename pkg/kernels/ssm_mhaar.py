"""Contains the state-space kernels: Metropolis-within-particle-Gibbs, the
Rao-Blackwellised averaged-ratio kernel with its sum-product ratio and the
subsampled averaged-ratio kernel."""
import numpy as np
from scipy.special import logsumexp

from kernels.core import MhOutcome, accept_decision
from kernels.latent_rb import all_paths, log_prefactor
from kernels.ssm import (backward_log_prob, backward_sample, backward_sample_paths, csmc, predictive_log_mix,
                         weights_at)
from util import categorical, check_log, log_mean_exp, parallel_map


def ssm_path_log_ratios(z, paths, theta, vartheta, zeta, model, q):
    """log r_{z,u}(theta, vartheta; zeta) for every row u of an (N, T) array of paths."""
    paths = np.asarray(paths)
    log_pref = log_prefactor(theta, vartheta, model, q)
    if np.isneginf(log_pref):
        return np.full(paths.shape[0], -np.inf)
    z = np.asarray(z)[None]
    total = (log_pref + model.log_joint_paths(vartheta, paths) - model.log_joint_paths(zeta, paths)
             + model.log_joint_paths(zeta, z)[0] - model.log_joint_paths(theta, z)[0])
    return check_log(total, 'state-space path log-ratio')


def ssm_path_log_ratio(z, z_new, theta, vartheta, zeta, model, q):
    """log r_{z,z'}(theta, vartheta; zeta)."""
    return float(ssm_path_log_ratios(z, np.asarray(z_new)[None], theta, vartheta, zeta, model, q)[0])


def _pairwise_factors(out, vartheta, zeta, model):
    """Unary log factors a_t(i) and pairwise log factors B_t(i, j) of
    r_{z, v^(k)}(., vartheta; zeta) b_zeta(k | v) without the anchor constant."""
    T = out.T
    first = out.particles.values[0]
    log_w = weights_at(out, zeta, model)
    # Cached weights are shared with the filter output.
    unary = weights_at(out, vartheta, model).copy()
    unary[0] += model.log_f_init(vartheta, first) - model.log_f_init(zeta, first)
    unary[T - 1] -= logsumexp(log_w[T - 1])
    pairwise = [None]
    if T > 1:
        log_d = predictive_log_mix(out, zeta, model)
        pairwise += list(out.transitions(vartheta, model) - log_d[:, None, :])
    return unary, pairwise


def _forward_messages(unary, pairwise):
    """Log-domain forward pass; alpha_t(j) sums all prefixes ending at j."""
    alphas = [unary[0]]
    for t in range(1, unary.shape[0]):
        alphas.append(unary[t] + logsumexp(alphas[-1][:, None] + pairwise[t], axis=0))
    return alphas


def _anchor_constant(anchor, theta, vartheta, zeta, model, q):
    log_pref = log_prefactor(theta, vartheta, model, q)
    if np.isneginf(log_pref):
        return -np.inf
    return log_pref + model.log_joint(zeta, anchor) - model.log_joint(theta, anchor)


def rb_log_ratio_ssm(out, theta, vartheta, zeta, model, q, anchor=None):
    """log r_{l,v}(theta, vartheta; zeta) by a sum-product pass in O(M^2 T).

    `anchor` is the index path l of the current-path slot; None means column 0.
    """
    l = np.zeros(out.T, dtype=int) if anchor is None else anchor
    const = _anchor_constant(out.particles.path(l), theta, vartheta, zeta, model, q)
    if np.isneginf(const):
        return -np.inf
    unary, pairwise = _pairwise_factors(out, vartheta, zeta, model)
    alphas = _forward_messages(unary, pairwise)
    return check_log(float(const + logsumexp(alphas[-1])), 'Rao-Blackwellised state-space log-ratio')


def ffbs_sample_b1(out, theta, vartheta, zeta, model, q, rng):
    """k with probability proportional to r_{v^(1), v^(k)}(theta, vartheta; zeta) b_zeta(k | v).

    Forward filtering over the pairwise factors, then backward sampling;
    `rng` is a numpy Generator.
    """
    unary, pairwise = _pairwise_factors(out, vartheta, zeta, model)
    alphas = _forward_messages(unary, pairwise)
    T = out.T
    k = np.empty(T, dtype=int)
    k[T - 1] = categorical(alphas[T - 1], rng)
    for t in range(T - 1, 0, -1):
        k[t - 1] = categorical(alphas[t - 1] + pairwise[t][:, k[t]], rng)
    return k


def enumerate_b1(out, theta, vartheta, zeta, model, q):
    """Brute-force r_{1,v} over all M^T paths: returns (paths, normalised b^(1) probs, log r_{1,v})."""
    z = out.particles.current()
    paths = list(all_paths(out.T, out.M))
    terms = np.array([ssm_path_log_ratio(z, out.particles.path(k), theta, vartheta, zeta, model, q)
                      + backward_log_prob(out, zeta, k, model) for k in paths])
    log_total = float(logsumexp(terms))
    return paths, np.exp(terms - log_total), log_total


def mwpg_step(theta, z, model, q, m, rng):
    """Metropolis-within-particle-Gibbs: refresh z by cSMC at theta, then a noisy MH move on theta.

    A rejection keeps the refreshed path.
    """
    gen = rng.child(0).generator()
    vartheta = q.sample(theta, gen)
    out = csmc(m, theta, z, model, rng.child(1))
    z_new = out.particles.path(backward_sample(out, theta, model, gen))
    log_pref = log_prefactor(theta, vartheta, model, q)
    log_r = -np.inf if np.isneginf(log_pref) else \
        check_log(log_pref + model.log_joint(vartheta, z_new) - model.log_joint(theta, z_new), 'MwPG log-ratio')
    if accept_decision(log_r, gen):
        return MhOutcome((vartheta, z_new), True, log_r, refreshed=True)
    return MhOutcome((theta, z_new), False, log_r, refreshed=True)


def mhaar_rb_ssm_step(theta, z, model, q, m, zetas, refresh, rng):
    """Rao-Blackwellised averaged-ratio move for a state-space model.

    c=1 accepts with r_{1,v}(theta, vartheta; zeta_1) and draws k from the
    ratio-weighted backward law; c=2 draws k from b_{zeta_2} and accepts with
    1 / r_{k,v}(vartheta, theta; zeta_2). With `refresh`, a rejected c=1 move
    re-runs backward sampling at theta, which needs zeta_1(theta, vartheta) = theta.
    """
    gen = rng.child(0).generator()
    vartheta = q.sample(theta, gen)
    if refresh and zetas.zeta1(theta, vartheta) != theta:
        raise ValueError('Refreshment needs zeta_1(theta, vartheta) = theta; schedule {} gives {}.'
                         .format(zetas.name, zetas.zeta1(theta, vartheta)))
    coin = 1 if gen.random() < 0.5 else 2
    zeta = zetas.zeta(coin, theta, vartheta)
    out = csmc(m, zeta, z, model, rng.child(1))

    if coin == 1:
        log_r = rb_log_ratio_ssm(out, theta, vartheta, zeta, model, q)
        if accept_decision(log_r, gen):
            k = ffbs_sample_b1(out, theta, vartheta, zeta, model, q, gen)
            return MhOutcome((vartheta, out.particles.path(k)), True, log_r, coin)
        if refresh:
            l = backward_sample(out, theta, model, gen)
            return MhOutcome((theta, out.particles.path(l)), False, log_r, coin, refreshed=True)
        return MhOutcome((theta, z), False, log_r, coin)

    k = backward_sample(out, zeta, model, gen)
    log_r = -rb_log_ratio_ssm(out, vartheta, theta, zeta, model, q, anchor=k)
    if accept_decision(log_r, gen):
        return MhOutcome((vartheta, out.particles.path(k)), True, log_r, coin)
    return MhOutcome((theta, z), False, log_r, coin)


def subsampled_paths(out, zeta, model, n, rng):
    """N latent paths by backward sampling at zeta; path i reads the stream rng.child(2, i)."""
    uniforms = parallel_map(lambda i: rng.child(2, i).generator().random(out.T), range(n))
    return out.particles.paths(backward_sample_paths(out, zeta, model, np.stack(uniforms)))


def subsampled_log_ratio(z, paths, theta, vartheta, zeta, model, q):
    """Coin-1 estimate: returns (log of the average of r_{z,u}(theta, vartheta; zeta) over
    the paths, the per-path log-ratios)."""
    log_ratios = ssm_path_log_ratios(z, paths, theta, vartheta, zeta, model, q)
    return log_mean_exp(log_ratios), log_ratios


def inverse_subsampled_log_ratio(z, paths, k, theta, vartheta, zeta, model, q):
    """Coin-2 estimate: minus the log of the average of r_{u^(k),u}(vartheta, theta; zeta)
    over z and every path other than u^(k)."""
    paths = np.asarray(paths)
    others = np.concatenate([np.asarray(z, dtype=paths.dtype)[None], np.delete(paths, k, axis=0)])
    return -log_mean_exp(ssm_path_log_ratios(paths[k], others, vartheta, theta, zeta, model, q))


def mhaar_s_ssm_step(theta, z, model, q, m, n, zetas, swap_refresh, rng):
    """Subsampled averaged-ratio move: N backward-sampled paths replace the sum over all M^T paths.

    With `swap_refresh`, a c=1 move first swaps z with a uniformly chosen
    path; a rejection then keeps the swapped-in path. Swapping needs
    zeta_1(theta, vartheta) = theta.
    """
    if n < 1:
        raise ValueError('Number of backward paths must be at least 1, got {}.'.format(n))
    gen = rng.child(0).generator()
    vartheta = q.sample(theta, gen)
    if swap_refresh and zetas.zeta1(theta, vartheta) != theta:
        raise ValueError('Swap refreshment needs zeta_1(theta, vartheta) = theta; schedule {} gives {}.'
                         .format(zetas.name, zetas.zeta1(theta, vartheta)))
    coin = 1 if gen.random() < 0.5 else 2
    zeta = zetas.zeta(coin, theta, vartheta)
    out = csmc(m, zeta, z, model, rng.child(1))
    us = subsampled_paths(out, zeta, model, n, rng)
    z = np.asarray(z)

    if coin == 1:
        if swap_refresh:
            j = int(gen.integers(n))
            swapped = us[j].copy()
            us[j] = z
            z = swapped
        log_r, log_ratios = subsampled_log_ratio(z, us, theta, vartheta, zeta, model, q)
        if accept_decision(log_r, gen):
            k = categorical(log_ratios, gen)
            return MhOutcome((vartheta, us[k]), True, log_r, coin, swap_refresh)
        return MhOutcome((theta, z), False, log_r, coin, swap_refresh)

    k = int(gen.integers(n))
    log_r = inverse_subsampled_log_ratio(z, us, k, theta, vartheta, zeta, model, q)
    if accept_decision(log_r, gen):
        return MhOutcome((vartheta, us[k]), True, log_r, coin)
    return MhOutcome((theta, z), False, log_r, coin)


def ssm_kernel(model, q, m, kind, zetas=None, refresh=False, n=1):
    """Step function over hashable (theta, tuple(z)) states for the transition-matrix oracle."""
    def step(state, rng):
        theta, z = state
        if kind == 'mwpg':
            out = mwpg_step(theta, z, model, q, m, rng)
        elif kind == 'mhaar-rb':
            out = mhaar_rb_ssm_step(theta, z, model, q, m, zetas, refresh, rng)
        elif kind == 'mhaar-s':
            out = mhaar_s_ssm_step(theta, z, model, q, m, n, zetas, refresh, rng)
        else:
            raise ValueError('Unknown state-space kernel {}.'.format(kind))
        theta_new, z_new = out.next_state
        return theta_new, tuple(np.asarray(z_new).tolist())

    return step
