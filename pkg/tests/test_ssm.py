import itertools

import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp

from kernels.latent_rb import ParticleMatrix, all_paths, swap_slots
from kernels.ssm import (CsmcOutput, FiniteSsm, LinearGaussianSsm, ZetaSchedule, backward_log_prob, backward_sample,
                         backward_sample_paths, csmc, csmc_log_density, importance_loglik, kalman_loglik,
                         smc_log_density, smc_log_evidence)
from util import NumericalContractError, RandomStreams


def lg_model(T, seed, theta=0.5, **kwargs):
    return LinearGaussianSsm.simulate(theta, T, RandomStreams(seed).generator(), **kwargs)


def test_kalman_single_observation():
    model = LinearGaussianSsm([0.8], a=0.5, sigma_z2=2.0, sigma_y2=0.3)
    expected = stats.norm.logpdf(0.8, loc=0.5 * 1.2, scale=np.sqrt(2.3))
    assert kalman_loglik(model, 1.2, model.y) == pytest.approx(expected, abs=1e-12)


def test_kalman_at_zero_ignores_the_offset():
    y = lg_model(20, 0).y
    values = [LinearGaussianSsm(y, a=a).kalman_loglik(0.0) for a in (0.0, 0.3, 1.0)]
    np.testing.assert_allclose(values, values[0], atol=1e-12)


def test_kalman_rejects_non_finite_input():
    model = LinearGaussianSsm([0.1, np.nan])
    with pytest.raises(ValueError):
        model.kalman_loglik(0.0)


def test_importance_sampling_agrees_with_kalman():
    model = lg_model(5, 1, sigma_y2=1.0)
    est, rel = importance_loglik(0.5, model, 1000000, RandomStreams(2).generator())
    assert abs(est - model.kalman_loglik(0.5)) < 3.0 * rel


def test_invalid_model_parameters():
    with pytest.raises(ValueError):
        LinearGaussianSsm([0.0], phi=1.0)
    with pytest.raises(ValueError):
        LinearGaussianSsm([0.0], sigma_y2=0.0)


def test_conditional_filter_pins_the_path():
    model = lg_model(6, 3)
    z = np.linspace(-1.0, 1.0, 6)
    out = csmc(4, 0.5, z, model, RandomStreams(4))
    assert out.particles.values.shape == (6, 4)
    np.testing.assert_array_equal(out.particles.current(), z)
    single = csmc(2, 0.5, [0.3], LinearGaussianSsm(model.y[:1]), RandomStreams(5))
    assert single.particles.values[0, 0] == 0.3
    with pytest.raises(ValueError):
        csmc(4, 0.5, None, model, RandomStreams(4))


def test_degenerate_weights_raise():
    model = LinearGaussianSsm([1e3, 0.0], sigma_y2=1e-6)
    with pytest.raises(NumericalContractError):
        csmc(3, 0.0, [0.0, 0.0], model, RandomStreams(6))


def test_backward_probabilities_sum_to_one():
    model = lg_model(3, 7)
    out = csmc(3, 0.5, model.y - 0.5, model, RandomStreams(8))
    total = logsumexp([backward_log_prob(out, 0.5, k, model) for k in all_paths(3, 3)])
    assert total == pytest.approx(0.0, abs=1e-12)


def test_single_particle_backward_path():
    model = lg_model(4, 9)
    out = csmc(1, 0.5, model.y, model, RandomStreams(10))
    k = backward_sample(out, 0.5, model, np.random.default_rng(0))
    np.testing.assert_array_equal(k, np.zeros(4, dtype=int))
    assert backward_log_prob(out, 0.5, k, model) == pytest.approx(0.0, abs=1e-12)


def test_backward_sampling_frequencies():
    model = lg_model(3, 11)
    out = csmc(3, 0.5, model.y - 0.5, model, RandomStreams(12))
    rng = np.random.default_rng(13)
    n = 20000
    counts = {}
    for _ in range(n):
        k = tuple(backward_sample(out, 0.5, model, rng))
        counts[k] = counts.get(k, 0) + 1
    for k in all_paths(3, 3):
        p = np.exp(backward_log_prob(out, 0.5, k, model))
        assert abs(counts.get(tuple(k), 0) / n - p) < 4.0 * np.sqrt(p * (1.0 - p) / n) + 1e-12


def test_filter_and_conditional_filter_densities_are_dual():
    model = FiniteSsm([0, 2])
    theta = 0.5
    T, M = 2, 2
    for cells in itertools.product(range(3), repeat=T * M):
        v = ParticleMatrix(np.array(cells).reshape(T, M))
        log_w = np.stack([model.log_g_obs(theta, v.values[t], t) for t in range(T)])
        out = CsmcOutput(v, log_w, theta)
        log_c_hat = float(np.sum(logsumexp(log_w, axis=1) - np.log(M)))
        for k in all_paths(T, M):
            lhs = smc_log_density(v, theta, model) + backward_log_prob(out, theta, k, model) + log_c_hat
            rhs = (-T * np.log(M) + model.log_joint(theta, v.path(k))
                   + csmc_log_density(swap_slots(v, k), theta, model))
            assert lhs == pytest.approx(rhs, abs=1e-10)


def test_finite_model_evidence_and_distribution():
    model = FiniteSsm([0, 1, 2])
    paths = list(itertools.product(range(3), repeat=3))
    assert model.log_evidence(0.0) == pytest.approx(logsumexp([model.log_joint(0.0, z) for z in paths]))
    states, p = model.exact_distribution()
    assert len(states) == 3 * 27
    assert p.sum() == pytest.approx(1.0)


@pytest.mark.slow
def test_particle_filter_evidence_is_unbiased():
    model = lg_model(10, 14)
    root = RandomStreams(15)
    exact = model.kalman_loglik(0.5)
    ratios = np.exp([smc_log_evidence(5, 0.5, model, root.child(r)) - exact for r in range(10000)])
    assert abs(ratios.mean() - 1.0) < 3.0 * ratios.std(ddof=1) / np.sqrt(ratios.size)


def test_zeta_schedules():
    theta_schedule = ZetaSchedule.theta()
    assert theta_schedule.zeta(1, 0.2, 0.8) == 0.2
    assert theta_schedule.zeta(2, 0.2, 0.8) == 0.8
    midpoint = ZetaSchedule.from_name('midpoint')
    assert midpoint.zeta(1, 0.2, 0.8) == midpoint.zeta(2, 0.2, 0.8) == pytest.approx(0.5)
    assert midpoint.check_symmetry([(0.1, 0.3), (-2.0, 5.0)])
    with pytest.raises(ValueError):
        ZetaSchedule.from_name('geometric')


def test_custom_zeta_schedule_symmetry():
    weighted = ZetaSchedule(lambda t, v: 0.25 * t + 0.75 * v, lambda t, v: 0.75 * t + 0.25 * v, 'weighted')
    assert weighted.check_symmetry([(0.0, 1.0), (-2.0, 4.0)])
    assert weighted.zeta(2, 0.0, 1.0) == pytest.approx(0.25)
    mismatched = ZetaSchedule(lambda t, v: 0.25 * t + 0.75 * v, lambda t, v: 0.25 * t + 0.75 * v, 'mismatched')
    with pytest.raises(ValueError):
        mismatched.check_symmetry([(0.0, 1.0)])
    assert mismatched.check_symmetry([(0.5, 0.5)])


@pytest.mark.parametrize('model', [lg_model(6, 16, a=0.5), FiniteSsm([0, 2, 1, 1])])
def test_path_densities_match_per_step_sums(model):
    paths = model.sample_path(0.3, 5, np.random.default_rng(17))
    for theta in (0.0, 1.0):
        batch = model.log_joint_paths(theta, paths)
        for z, value in zip(paths, batch):
            expected = model.log_f_init(theta, z[0]) + sum(model.log_g_obs(theta, z[t], t) for t in range(model.T))
            expected += sum(model.log_f_trans(theta, z[t - 1], z[t]) for t in range(1, model.T))
            assert value == pytest.approx(float(expected), abs=1e-10)
            assert model.log_joint(theta, z) == pytest.approx(float(expected), abs=1e-10)


def test_cached_arrays_match_direct_evaluation():
    model = lg_model(5, 18)
    out = csmc(4, 0.5, model.y - 0.5, model, RandomStreams(19))
    values = out.particles.values
    np.testing.assert_allclose(out.obs_weights(1.1, model),
                               np.stack([model.log_g_obs(1.1, values[t], t) for t in range(5)]), atol=1e-12)
    for t in range(1, 5):
        np.testing.assert_allclose(out.transitions(1.1, model)[t - 1],
                                   model.log_f_trans(1.1, values[t - 1][:, None], values[t][None, :]), atol=1e-12)
    assert out.obs_weights(0.5, model) is out.log_weights


def test_batched_backward_paths_follow_the_backward_law():
    model = lg_model(3, 20)
    out = csmc(3, 0.5, model.y - 0.5, model, RandomStreams(21))
    n = 20000
    ks = backward_sample_paths(out, 0.8, model, np.random.default_rng(22).random((n, 3)))
    assert ks.shape == (n, 3)
    counts = {}
    for k in map(tuple, ks):
        counts[k] = counts.get(k, 0) + 1
    for k in all_paths(3, 3):
        p = np.exp(backward_log_prob(out, 0.8, k, model))
        assert abs(counts.get(tuple(k), 0) / n - p) < 4.0 * np.sqrt(p * (1.0 - p) / n) + 1e-12
    with pytest.raises(ValueError):
        backward_sample_paths(out, 0.8, model, np.zeros((2, 4)))
