import numpy as np
import pytest

from diagnostics import ensemble_average, ChainTrace
from kernels.analytic_toy import (ToyParams, absolute_relaxation_time, ensemble_toy_curve, gamma_ratio, gamma_table,
                                  mixing_time_bounds, relaxation_time, toy_exact_matrix, toy_instance,
                                  toy_kernel_prob, tv_mixing_time)
from kernels.mhaar import MhaarConfig, mhaar_step
from util import RandomStreams


@pytest.mark.parametrize('n', [1, 2, 7, 64])
def test_unit_odds_always_switch(n):
    assert toy_kernel_prob(ToyParams(1.0, 0.0, n)) == pytest.approx(1.0, abs=1e-12)


def test_single_replicate_switch_probability():
    assert toy_kernel_prob(ToyParams(2.0, 0.0, 1)) == pytest.approx(2.0 / 3.0, abs=1e-12)


@pytest.mark.parametrize('p, expected', [
    (ToyParams(1.0, 0.0, 1), 0.5),
    (ToyParams(2.0, 0.0, 1), 0.75),
    (ToyParams(2.0, 0.5, 1), 1.5),
])
def test_relaxation_time(p, expected):
    assert relaxation_time(p) == pytest.approx(expected, abs=1e-12)


def test_gamma_ratio_trivial_cases():
    assert gamma_ratio(3.0, 1) == pytest.approx(1.0)
    assert gamma_ratio(1.0, 50) == pytest.approx(1.0)


@pytest.mark.parametrize('a, expected', [(2.0, 0.65), (5.0, 0.35), (10.0, 0.20)])
def test_gamma_ratio_at_many_replicates(a, expected):
    assert abs(gamma_ratio(a, 1000) - expected) < 0.05


@pytest.mark.parametrize('a', [2.0, 5.0, 10.0])
def test_spectral_gap_grows_with_replicates(a):
    gaps = [2.0 * toy_kernel_prob(ToyParams(a, 0.0, n)) for n in (1, 2, 4, 8, 16, 64)]
    assert all(later >= earlier - 1e-12 for earlier, later in zip(gaps, gaps[1:]))


def test_gamma_table_rows():
    rows = gamma_table([2.0, 5.0], [1, 10])
    assert [(a, n) for a, n, _ in rows] == [(2.0, 1), (2.0, 10), (5.0, 1), (5.0, 10)]
    assert rows[0][2] == pytest.approx(1.0)


def test_mixing_time_bounds_examples():
    lower, _ = mixing_time_bounds(0.5, 3.0)
    assert lower == pytest.approx(0.0, abs=1e-12)
    lower, upper = mixing_time_bounds(0.25, 1.0)
    assert lower == pytest.approx(0.0, abs=1e-12)
    assert upper == pytest.approx(np.log(8.0))
    with pytest.raises(ValueError):
        mixing_time_bounds(1.5, 1.0)


@pytest.mark.parametrize('p', [ToyParams(2.0, 0.0, 1), ToyParams(2.0, 0.5, 1), ToyParams(5.0, 0.5, 8),
                               ToyParams(10.0, 0.0, 4)])
@pytest.mark.parametrize('eps', [0.1, 0.01, 0.001])
def test_mixing_time_lies_between_bounds(p, eps):
    lower, upper = mixing_time_bounds(eps, absolute_relaxation_time(p))
    t = tv_mixing_time(p, eps)
    assert lower <= t <= upper + 1.0


def test_second_eigenvalue():
    p = ToyParams(5.0, 0.25, 3)
    values = np.sort(np.linalg.eigvals(toy_exact_matrix(p)).real)
    assert values[1] == pytest.approx(1.0)
    assert values[0] == pytest.approx(1.0 - 2.0 * toy_kernel_prob(p))


def test_invalid_parameters():
    with pytest.raises(ValueError):
        ToyParams(0.0)
    with pytest.raises(ValueError):
        ToyParams(2.0, alpha=1.0)
    with pytest.raises(ValueError):
        ToyParams(2.0, n=0)


def test_ensemble_matches_exact_curve():
    p = ToyParams(2.0, 0.5, 2)
    target, q, scheme = toy_instance(p)
    cfg = MhaarConfig(p.n)
    runs = []
    steps = 8
    for r in range(400):
        root = RandomStreams(9).child(r)
        theta = -1.0
        samples, outcomes = [], []
        for t in range(steps):
            outcome = mhaar_step(theta, None, target, q, scheme, cfg, root.child(t))
            theta = outcome.next_state[0]
            samples.append(theta)
            outcomes.append(outcome)
        runs.append(ChainTrace.from_outcomes(samples, outcomes))

    mean, _ = ensemble_average(runs, lambda s: s == 1.0)
    lam = 1.0 - 2.0 * toy_kernel_prob(p)
    exact = 0.5 * (1.0 - lam ** np.arange(1, steps + 1))
    se = np.sqrt(exact * (1.0 - exact) / len(runs))
    assert np.all(np.abs(mean - exact) < 4.0 * se)
    np.testing.assert_allclose(ensemble_toy_curve(p, steps + 1)[1:], np.abs(exact - 0.5), atol=1e-12)


def eigen_relaxation_time(p):
    values = np.sort(np.linalg.eigvals(toy_exact_matrix(p)).real)
    return 1.0 / (1.0 - values[0])


@pytest.mark.parametrize('alpha', [0.0, 0.3, 0.7])
@pytest.mark.parametrize('a, n', [(2.0, 2), (5.0, 8), (10.0, 64)])
def test_gamma_ratio_does_not_depend_on_hold_probability(a, n, alpha):
    from_matrix = eigen_relaxation_time(ToyParams(a, alpha, n)) / eigen_relaxation_time(ToyParams(a, alpha, 1))
    assert from_matrix == pytest.approx(gamma_ratio(a, n), rel=1e-10)
    assert gamma_ratio(a, n, alpha) == pytest.approx(gamma_ratio(a, n), rel=1e-12)
