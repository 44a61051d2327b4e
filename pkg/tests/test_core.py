import numpy as np
import pytest

from diagnostics import stationarity_residual
from kernels.analytic_toy import ToyParams, toy_instance
from kernels.core import (AuxiliaryScheme, ExactKernel, FiniteProposal, GaussianRandomWalk, accept_decision,
                          build_transition_matrix, involution_check, pmr_step, pmr_transition_probs)
from kernels.exchange import CountModel, ExchangeScheme
from kernels.mhaar import MhaarConfig, mhaar_kernel
from util import NumericalContractError, RandomStreams


GRID = [-1.0, -0.5, 0.0, 0.5, 1.0]


class IdentityScheme(AuxiliaryScheme):
    def sample_u(self, theta, vartheta, z, rng):
        return rng.standard_normal()

    def log_ratio(self, theta, vartheta, z, u):
        return 0.0

    def phi1(self, theta, vartheta, z, u):
        return z

    def phi2(self, theta, vartheta, z, u):
        return u


class SwapScheme(AuxiliaryScheme):
    def sample_u(self, theta, vartheta, z, rng):
        return rng.standard_normal()

    def log_ratio(self, theta, vartheta, z, u):
        return z - u

    def phi1(self, theta, vartheta, z, u):
        return u

    def phi2(self, theta, vartheta, z, u):
        return z


def real_points(rng):
    return rng.standard_normal(), rng.standard_normal(), rng.standard_normal()


def test_accept_decision_certain_cases():
    rng = np.random.default_rng(0)
    assert all(accept_decision(0.0, rng) for _ in range(100))
    assert not any(accept_decision(-np.inf, rng) for _ in range(100))
    with pytest.raises(NumericalContractError):
        accept_decision(np.nan, rng)


def test_accept_decision_frequency():
    rng = np.random.default_rng(1)
    n = 100000
    p = np.mean([accept_decision(np.log(0.5), rng) for _ in range(n)])
    assert abs(p - 0.5) < 3.0 * np.sqrt(0.25 / n)


@pytest.mark.parametrize('scheme', [IdentityScheme(), SwapScheme()])
def test_involution_check_passes_on_involutions(scheme):
    report = involution_check(scheme, 1000, np.random.default_rng(2), real_points)
    assert report['failures'] == 0
    assert report['max_round_trip'] == 0.0
    assert report['max_skew'] < 1e-12


def test_exchange_scheme_is_skew_symmetric():
    model = CountModel(3, 3)
    scheme = ExchangeScheme(model, GaussianRandomWalk(0.5), (2, 0, 1))
    report = involution_check(scheme, 1000, np.random.default_rng(3),
                              lambda rng: (rng.standard_normal(), rng.standard_normal(), None))
    assert report['failures'] == 0
    assert report['finite_ratios'] == 1000
    assert report['max_skew'] < 1e-10



def test_involution_check_draws_points_from_the_scheme():
    model = CountModel(3, 3)
    report = involution_check(ExchangeScheme(model, GaussianRandomWalk(0.5), (2, 0, 1)), 500,
                              np.random.default_rng(5))
    assert report['failures'] == 0
    assert report['finite_ratios'] == 500
    grid_model = CountModel(2, 3, grid=GRID)
    report = involution_check(ExchangeScheme(grid_model, FiniteProposal(GRID, 0.2), (1, 2)), 200,
                              np.random.default_rng(6))
    assert report['failures'] == 0
    _, _, toy_scheme = toy_instance(ToyParams(3.0, 0.5, 1))
    report = involution_check(toy_scheme, 200, np.random.default_rng(7))
    assert report['failures'] == 0
    assert report['max_round_trip'] < 1e-12
    with pytest.raises(NotImplementedError):
        involution_check(IdentityScheme(), 10, np.random.default_rng(8))


def test_deterministic_cycle_gives_permutation():
    cycle = {0: 1, 1: 2, 2: 0}
    P = build_transition_matrix(lambda s, rng: cycle[s], [0, 1, 2], 10, RandomStreams(0))
    np.testing.assert_array_equal(P, [[0, 1, 0], [0, 0, 1], [1, 0, 0]])


def test_transition_matrix_input_errors():
    with pytest.raises(ValueError):
        build_transition_matrix(lambda s, rng: s, [], 10, RandomStreams(0))
    with pytest.raises(ValueError):
        build_transition_matrix(lambda s, rng: s + 1, [0, 1], 3, RandomStreams(0))


@pytest.mark.parametrize('a, expected', [(1.0, 1.0), (2.0, 2.0 / 3.0)])
def test_toy_matrix_off_diagonal(a, expected):
    p = ToyParams(a, 0.0, 1)
    target, q, scheme = toy_instance(p)
    P = build_transition_matrix(mhaar_kernel(target, q, scheme, MhaarConfig(1)),
                                [(-1.0, None), (1.0, None)], 0, RandomStreams(0))
    np.testing.assert_allclose(P, [[1 - expected, expected], [expected, 1 - expected]], atol=1e-12)


def test_monte_carlo_matrix_matches_exact_row():
    p = ToyParams(2.0, 0.0, 1)
    target, q, scheme = toy_instance(p)
    step = mhaar_kernel(target, q, scheme, MhaarConfig(1), exact=False)
    trials = 4000
    P = build_transition_matrix(step, [(-1.0, None), (1.0, None)], trials, RandomStreams(4))
    se = np.sqrt(2.0 / 9.0 / trials)
    assert np.all(np.abs(P[:, 1] - P[:, 0] - np.array([1.0 / 3.0, -1.0 / 3.0])) < 8.0 * se)


def test_finite_proposal_is_symmetric():
    q = FiniteProposal(GRID, alpha=0.2)
    for theta in GRID:
        assert sum(p for _, p in q.support(theta)) == pytest.approx(1.0)
        for vartheta, _ in q.support(theta):
            assert q.log_density(theta, vartheta) == pytest.approx(q.log_density(vartheta, theta))
    with pytest.raises(ValueError):
        q.support(0.25)


def exchange_grid_instance():
    model = CountModel(2, 3, grid=GRID)
    q = FiniteProposal(GRID, alpha=0.2)
    y = (2, 1)
    return model, q, y, ExchangeScheme(model, q, y)


def test_pmr_kernel_is_reversible():
    model, q, y, scheme = exchange_grid_instance()
    kernel = ExactKernel(lambda s, rng: pmr_step(s[0], s[1], model, q, scheme, rng).next_state,
                         lambda s: pmr_transition_probs(s, q, scheme))
    states = [(g, None) for g in GRID]
    P = build_transition_matrix(kernel, states, 0, RandomStreams(0))
    stationarity, balance = stationarity_residual(P, model.exact_posterior(GRID, y))
    assert stationarity < 1e-10
    assert balance < 1e-10


def test_single_replicate_mhaar_equals_pmr():
    model, q, y, scheme = exchange_grid_instance()
    states = [(g, None) for g in GRID]
    pmr = ExactKernel(None, lambda s: pmr_transition_probs(s, q, scheme))
    P_pmr = build_transition_matrix(pmr, states, 0, RandomStreams(0))
    P_mhaar = build_transition_matrix(mhaar_kernel(model, q, scheme, MhaarConfig(1)), states, 0, RandomStreams(0))
    np.testing.assert_allclose(P_mhaar, P_pmr, atol=1e-12)
