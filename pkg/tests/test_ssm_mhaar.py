import functools
import itertools

import numpy as np
import pytest
from scipy.special import logsumexp, softmax

from diagnostics import batch_means_ci, detailed_balance_zscore, iac
from kernels.core import FiniteProposal, GaussianRandomWalk, build_transition_matrix
from kernels.latent_rb import all_paths, log_prefactor
from kernels.ssm import FiniteSsm, LinearGaussianSsm, ZetaSchedule, backward_log_prob, backward_sample, csmc
from kernels.ssm_mhaar import (enumerate_b1, ffbs_sample_b1, inverse_subsampled_log_ratio, mhaar_rb_ssm_step,
                               mhaar_s_ssm_step, mwpg_step, rb_log_ratio_ssm, ssm_kernel, ssm_path_log_ratio,
                               ssm_path_log_ratios, subsampled_log_ratio, subsampled_paths)
from util import RandomStreams


def lg_instance(seed, T=3, M=3, zeta=None, theta=0.4, vartheta=0.9):
    model = LinearGaussianSsm.simulate(0.5, T, RandomStreams(seed).generator(), a=0.5)
    zeta = theta if zeta is None else zeta
    out = csmc(M, zeta, model.y - 0.25, model, RandomStreams(seed + 1))
    return model, out, theta, vartheta


def exact_smoothing_draw(model, theta, rng):
    """Exact draw of z | y, theta for the a = 1 linear-Gaussian model."""
    lags = np.abs(np.subtract.outer(np.arange(model.T), np.arange(model.T)))
    prior_cov = model.sigma_z2 * model.phi ** lags
    cov = np.linalg.inv(np.linalg.inv(prior_cov) + np.eye(model.T) / model.sigma_y2)
    mean = cov @ ((model.y - theta) / model.sigma_y2)
    return rng.multivariate_normal(mean, cov)


@pytest.mark.parametrize('zeta_name', ['theta', 'midpoint', 'vartheta'])
def test_sum_product_matches_enumeration(zeta_name):
    q = GaussianRandomWalk(0.5)
    for seed in range(0, 20, 2):
        theta, vartheta = 0.4, 0.9
        zeta = {'theta': theta, 'midpoint': 0.5 * (theta + vartheta), 'vartheta': vartheta}[zeta_name]
        model, out, theta, vartheta = lg_instance(seed, zeta=zeta)
        _, _, log_total = enumerate_b1(out, theta, vartheta, zeta, model, q)
        assert rb_log_ratio_ssm(out, theta, vartheta, zeta, model, q) == pytest.approx(log_total, abs=1e-10)


def test_sum_product_on_finite_model():
    model = FiniteSsm([0, 2, 1])
    q = FiniteProposal(model.grid, alpha=0.2)
    for zeta in (-1.0, -0.5, 0.0):
        out = csmc(3, zeta, (1, 1, 0), model, RandomStreams(3))
        _, _, log_total = enumerate_b1(out, -1.0, 0.0, zeta, model, q)
        assert rb_log_ratio_ssm(out, -1.0, 0.0, zeta, model, q) == pytest.approx(log_total, abs=1e-10)


def test_anchored_ratio_matches_enumeration():
    q = GaussianRandomWalk(0.5)
    model, out, theta, vartheta = lg_instance(21, zeta=0.65)
    zeta = 0.65
    anchor = np.array([2, 0, 1])
    terms = [ssm_path_log_ratio(out.particles.path(anchor), out.particles.path(l), theta, vartheta, zeta, model, q)
             + backward_log_prob(out, zeta, l, model) for l in all_paths(3, 3)]
    assert rb_log_ratio_ssm(out, theta, vartheta, zeta, model, q, anchor=anchor) == pytest.approx(
        logsumexp(terms), abs=1e-10)


def test_same_parameter_ratio_is_one():
    model, out, theta, _ = lg_instance(22)
    assert rb_log_ratio_ssm(out, theta, theta, theta, model, GaussianRandomWalk(0.5)) == pytest.approx(0.0, abs=1e-10)


def test_ratio_weighted_law_at_zeta_equal_vartheta_is_backward_law():
    q = GaussianRandomWalk(0.5)
    model, out, theta, vartheta = lg_instance(23, zeta=0.9)
    paths, probs, _ = enumerate_b1(out, theta, vartheta, vartheta, model, q)
    expected = [np.exp(backward_log_prob(out, vartheta, k, model)) for k in paths]
    np.testing.assert_allclose(probs, expected, atol=1e-10)


def test_forward_filtering_backward_sampling_frequencies():
    q = GaussianRandomWalk(0.5)
    model, out, theta, vartheta = lg_instance(24, zeta=0.65)
    paths, probs, _ = enumerate_b1(out, theta, vartheta, 0.65, model, q)
    rng = np.random.default_rng(25)
    n = 20000
    counts = {}
    for _ in range(n):
        k = tuple(ffbs_sample_b1(out, theta, vartheta, 0.65, model, q, rng))
        counts[k] = counts.get(k, 0) + 1
    for k, p in zip(paths, probs):
        assert abs(counts.get(tuple(k), 0) / n - p) < 4.0 * np.sqrt(p * (1.0 - p) / n) + 1e-12


def test_single_particle_ffbs_returns_current_path():
    model, out, theta, vartheta = lg_instance(26, T=5, M=1)
    k = ffbs_sample_b1(out, theta, vartheta, theta, model, GaussianRandomWalk(0.5), np.random.default_rng(0))
    np.testing.assert_array_equal(k, np.zeros(5, dtype=int))


def test_rb_ratio_is_unbiased_on_finite_model():
    model = FiniteSsm([0, 1, 2, 2])
    q = FiniteProposal(model.grid, alpha=0.2)
    theta, vartheta = 0.0, 1.0
    paths = list(itertools.product(range(3), repeat=4))
    post = softmax([model.log_joint(theta, z) for z in paths])
    exact = np.exp(log_prefactor(theta, vartheta, model, q) + model.log_evidence(vartheta)
                   - model.log_evidence(theta))
    for zeta in (theta, 0.5, vartheta):
        root = RandomStreams(27)
        picks = root.generator().choice(len(paths), size=20000, p=post)
        ratios = np.exp([rb_log_ratio_ssm(csmc(3, zeta, paths[i], model, root.child(r)), theta, vartheta, zeta,
                                          model, q) for r, i in enumerate(picks)])
        assert abs(ratios.mean() - exact) < 3.0 * ratios.std(ddof=1) / np.sqrt(ratios.size)


@pytest.mark.slow
def test_rb_ratio_is_unbiased_on_linear_gaussian_model():
    model = LinearGaussianSsm.simulate(0.5, 20, RandomStreams(28).generator())
    q = GaussianRandomWalk(0.5)
    theta, vartheta = 0.5, 0.6
    exact = np.exp(log_prefactor(theta, vartheta, model, q) + model.kalman_loglik(vartheta)
                   - model.kalman_loglik(theta))
    rng = np.random.default_rng(29)
    root = RandomStreams(30)
    for zetas in (ZetaSchedule.theta(), ZetaSchedule.midpoint()):
        zeta = zetas.zeta1(theta, vartheta)
        ratios = np.exp([rb_log_ratio_ssm(csmc(5, zeta, exact_smoothing_draw(model, theta, rng), model,
                                               root.child(r)), theta, vartheta, zeta, model, q)
                         for r in range(10000)])
        assert abs(ratios.mean() - exact) < 3.0 * ratios.std(ddof=1) / np.sqrt(ratios.size)


def ratio_estimates(z, theta, vartheta, zeta, model, q, m, n, node):
    """Coin-2 Rao-Blackwellised, coin-1 subsampled and coin-2 subsampled estimates of
    r(theta, vartheta) from one conditional filter run at zeta."""
    out = csmc(m, zeta, z, model, node.child(1))
    gen = node.child(0).generator()
    k = backward_sample(out, zeta, model, gen)
    rb_inverse = -rb_log_ratio_ssm(out, vartheta, theta, zeta, model, q, anchor=k)
    us = subsampled_paths(out, zeta, model, n, node)
    forward, _ = subsampled_log_ratio(z, us, theta, vartheta, zeta, model, q)
    inverse = inverse_subsampled_log_ratio(z, us, int(gen.integers(n)), theta, vartheta, zeta, model, q)
    return np.exp([rb_inverse, forward, inverse])


def assert_unbiased(estimates, exact, width):
    for column in np.asarray(estimates).T:
        se = column.std(ddof=1) / np.sqrt(column.size)
        assert abs(column.mean() - exact) <= width * se + 1e-12


def test_inverse_and_subsampled_ratios_are_unbiased_on_finite_model():
    model = FiniteSsm([0, 1, 2, 2])
    q = FiniteProposal(model.grid, alpha=0.2)
    theta, vartheta = 0.0, 1.0
    paths = list(itertools.product(range(3), repeat=4))
    post = softmax([model.log_joint(theta, z) for z in paths])
    exact = np.exp(log_prefactor(theta, vartheta, model, q) + model.log_evidence(vartheta)
                   - model.log_evidence(theta))
    for zeta in (theta, 0.5, vartheta):
        root = RandomStreams(44)
        picks = root.generator().choice(len(paths), size=6000, p=post)
        estimates = [ratio_estimates(paths[i], theta, vartheta, zeta, model, q, 3, 3, root.child(r))
                     for r, i in enumerate(picks)]
        # 3.5 standard errors per column over nine comparisons.
        assert_unbiased(estimates, exact, 3.5)


@pytest.mark.slow
def test_inverse_and_subsampled_ratios_are_unbiased_on_linear_gaussian_model():
    model = LinearGaussianSsm.simulate(0.5, 20, RandomStreams(45).generator())
    q = GaussianRandomWalk(0.5)
    theta, vartheta = 0.5, 0.6
    exact = np.exp(log_prefactor(theta, vartheta, model, q) + model.kalman_loglik(vartheta)
                   - model.kalman_loglik(theta))
    rng = np.random.default_rng(46)
    root = RandomStreams(47)
    for zeta in (theta, 0.5 * (theta + vartheta), vartheta):
        estimates = [ratio_estimates(exact_smoothing_draw(model, theta, rng), theta, vartheta, zeta, model, q,
                                     5, 4, root.child(r)) for r in range(10000)]
        assert_unbiased(estimates, exact, 3.5)


def test_mwpg_with_staying_proposal_always_accepts():
    model = FiniteSsm([0, 2, 2])
    q = FiniteProposal(model.grid, alpha=1.0)
    root = RandomStreams(31)
    z = (0, 0, 0)
    for t in range(100):
        out = mwpg_step(0.0, z, model, q, 3, root.child(t))
        assert out.accepted and out.refreshed
        z = out.next_state[1]


def test_refresh_requires_theta_schedule():
    model = LinearGaussianSsm.simulate(0.5, 4, RandomStreams(32).generator())
    with pytest.raises(ValueError):
        mhaar_rb_ssm_step(0.5, model.y, model, GaussianRandomWalk(0.5), 3, ZetaSchedule.midpoint(), True,
                          RandomStreams(33))


def test_swap_refresh_requires_theta_schedule():
    model = LinearGaussianSsm.simulate(0.5, 4, RandomStreams(32).generator())
    q = GaussianRandomWalk(0.5)
    root = RandomStreams(48)
    for t in range(20):
        with pytest.raises(ValueError):
            mhaar_s_ssm_step(0.5, model.y, model, q, 3, 2, ZetaSchedule.midpoint(), True, root.child(t))
        out = mhaar_s_ssm_step(0.5, model.y, model, q, 3, 2, ZetaSchedule.theta(), True, root.child(t))
        assert out.refreshed == (out.coin == 1)


def test_batched_path_ratios_match_single_paths():
    model, out, theta, vartheta = lg_instance(49, T=4, M=3)
    q = GaussianRandomWalk(0.5)
    zeta = 0.7
    z = out.particles.current()
    paths = out.particles.paths(np.array(list(all_paths(4, 3)))[::7])
    batch = ssm_path_log_ratios(z, paths, theta, vartheta, zeta, model, q)
    assert batch.shape == (paths.shape[0],)
    for u, value in zip(paths, batch):
        expected = (log_prefactor(theta, vartheta, model, q) + model.log_joint(vartheta, u)
                    + model.log_joint(zeta, z) - model.log_joint(zeta, u) - model.log_joint(theta, z))
        assert value == pytest.approx(expected, abs=1e-10)
        assert ssm_path_log_ratio(z, u, theta, vartheta, zeta, model, q) == pytest.approx(expected, abs=1e-10)


def test_subsampled_kernel_with_one_particle_uses_the_path_ratio():
    model = LinearGaussianSsm.simulate(0.5, 6, RandomStreams(34).generator())
    q = GaussianRandomWalk(0.5)
    zetas = ZetaSchedule.midpoint()
    z = model.y - 0.5
    root = RandomStreams(35)
    for t in range(50):
        node = root.child(t)
        out = mhaar_s_ssm_step(0.5, z, model, q, 1, 1, zetas, False, node)
        vartheta = q.sample(0.5, node.child(0).generator())
        zeta = zetas.zeta(out.coin, 0.5, vartheta)
        if out.coin == 1:
            expected = ssm_path_log_ratio(z, z, 0.5, vartheta, zeta, model, q)
        else:
            expected = -ssm_path_log_ratio(z, z, vartheta, 0.5, zeta, model, q)
        assert out.log_ratio_used == pytest.approx(expected, abs=1e-10)
        np.testing.assert_array_equal(out.next_state[1], z)


def test_subsampled_kernel_rejects_bad_count():
    model = FiniteSsm([0, 1])
    with pytest.raises(ValueError):
        mhaar_s_ssm_step(0.0, (0, 1), model, FiniteProposal(model.grid, 0.2), 2, 0, ZetaSchedule.theta(), False,
                         RandomStreams(0))


def stationarity_zscore(P, pi, trials):
    se = np.sqrt(np.sum((pi[:, None] ** 2) * P * (1.0 - P), axis=0) / trials)
    resid = np.abs(pi @ P - pi)
    return float(np.max(np.where(se > 0.0, resid / np.where(se > 0.0, se, 1.0), np.where(resid > 1e-12, np.inf, 0.0))))


def finite_matrix(kind, trials, seed, **kwargs):
    model = FiniteSsm([0, 2])
    q = FiniteProposal(model.grid, alpha=0.2)
    states, pi = model.exact_distribution()
    P = build_transition_matrix(ssm_kernel(model, q, 2, kind, **kwargs), states, trials, RandomStreams(seed))
    return P, pi


@pytest.mark.slow
@pytest.mark.parametrize('kind, kwargs', [
    ('mhaar-rb', {'zetas': ZetaSchedule.theta()}),
    ('mhaar-rb', {'zetas': ZetaSchedule.theta(), 'refresh': True}),
    ('mhaar-rb', {'zetas': ZetaSchedule.midpoint()}),
    ('mhaar-s', {'zetas': ZetaSchedule.theta(), 'n': 3}),
    ('mhaar-s', {'zetas': ZetaSchedule.midpoint(), 'n': 2}),
])
def test_state_space_kernels_are_reversible(kind, kwargs):
    trials = 3000
    P, pi = finite_matrix(kind, trials, 36, **kwargs)
    assert detailed_balance_zscore(P, pi, trials) < 5.0


@pytest.mark.slow
@pytest.mark.parametrize('kind, kwargs', [
    ('mwpg', {}),
    ('mhaar-s', {'zetas': ZetaSchedule.theta(), 'n': 3, 'refresh': True}),
])
def test_state_space_kernels_leave_posterior_invariant(kind, kwargs):
    trials = 3000
    P, pi = finite_matrix(kind, trials, 37, **kwargs)
    assert stationarity_zscore(P, pi, trials) < 5.0


def lg_chain(step, model, iterations, seed):
    root = RandomStreams(seed)
    state = (0.5, tuple(exact_smoothing_draw(model, 0.5, root.child(0).generator())))
    thetas = []
    for t in range(1, iterations + 1):
        state = step(state, root.child(t))
        thetas.append(state[0])
    return np.array(thetas)


@functools.lru_cache(maxsize=None)
def trend_chain(kind, m, n=1, refresh=False, iterations=30000):
    model = LinearGaussianSsm.simulate(0.5, 40, RandomStreams(38).generator(), a=1.0, phi=0.5, sigma_y2=0.1)
    q = GaussianRandomWalk(0.3)
    step = ssm_kernel(model, q, m, kind, zetas=ZetaSchedule.theta(), refresh=refresh, n=n)
    return lg_chain(step, model, iterations, 39)


@pytest.mark.slow
def test_more_particles_mix_faster():
    chains = [trend_chain('mhaar-rb', 5, iterations=60000)] + [trend_chain('mhaar-rb', m) for m in (10, 20, 50)]
    values = [iac(chain).value for chain in chains]
    assert all(a > b for a, b in zip(values, values[1:])), values
    # 50 batches: the interval spans about a factor of two.
    _, low_5, _ = batch_means_ci(chains[0], n_batches=50)
    _, _, high_50 = batch_means_ci(chains[-1], n_batches=50)
    assert high_50 < low_5


@pytest.mark.slow
def test_refreshment_does_not_slow_the_chain():
    rb = trend_chain('mhaar-rb', 5, iterations=60000)
    refreshed = trend_chain('mhaar-rb', 5, refresh=True, iterations=60000)
    assert iac(refreshed).value <= iac(rb).value


@pytest.mark.slow
def test_gibbs_parameter_update_gains_little_from_particles():
    model = LinearGaussianSsm.simulate(0.5, 40, RandomStreams(44).generator(), a=1.0, phi=0.5, sigma_y2=1.0)
    q = GaussianRandomWalk(0.3)
    few = lg_chain(ssm_kernel(model, q, 5, 'mwpg'), model, 30000, 45)
    many = lg_chain(ssm_kernel(model, q, 50, 'mwpg'), model, 30000, 46)
    assert iac(few).value / iac(many).value < 2.0


@pytest.mark.slow
def test_subsampling_improves_with_paths_and_never_beats_the_full_average():
    # Tolerance: each comparison uses 95% batch-means intervals over 20 batches.
    intervals = [batch_means_ci(trend_chain('mhaar-s', 20, n=n, iterations=15000)) for n in (10, 20, 40, 60)]
    for (_, _, high), (_, low, _) in zip(intervals, intervals[1:]):
        assert low <= high
    _, low_rb, _ = batch_means_ci(trend_chain('mhaar-rb', 20))
    assert intervals[-1][2] >= low_rb
