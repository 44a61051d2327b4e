"""Contains the exactly solvable two-state averaged-ratio chain.

The target is uniform on {-1, 1}. The parameter proposal flips the sign
with probability 1 - alpha. Each auxiliary draw takes the value a with
probability 1/(1+a) and 1/a otherwise, so the per-draw ratio is the draw
itself. Its mean is 1, the exact ratio.
"""
from collections import namedtuple

import numpy as np
from scipy.special import gammaln

from kernels.core import AuxiliaryScheme, ProposalKernel, TargetModel


class ToyParams(namedtuple('ToyParams', ['a', 'alpha', 'n'])):
    __slots__ = ()

    def __new__(cls, a, alpha=0.0, n=1):
        if not a > 0.0:
            raise ValueError('Toy odds parameter a must be positive, got {}.'.format(a))
        if not 0.0 <= alpha < 1.0:
            raise ValueError('Toy hold probability alpha must lie in [0, 1), got {}.'.format(alpha))
        if int(n) < 1:
            raise ValueError('Toy replicate count must be at least 1, got {}.'.format(n))
        return super(ToyParams, cls).__new__(cls, float(a), float(alpha), int(n))


def log_binomial_pmf(k, n, p):
    """log of the Binomial(n, p) pmf at k; -inf outside 0..n."""
    k = np.asarray(k)
    inside = (k >= 0) & (k <= n)
    kk = np.where(inside, k, 0)
    out = (gammaln(n + 1) - gammaln(kk + 1) - gammaln(n - kk + 1)
           + kk * np.log(p) + (n - kk) * np.log1p(-p))
    return np.where(inside, out, -np.inf)


def toy_kernel_prob(p):
    """Probability of switching sign in one MHAAR step."""
    a, alpha, n = p
    if n == 1:
        return (1.0 - alpha) * (min(1.0, a) / (1.0 + a) + a * min(1.0, 1.0 / a) / (1.0 + a))

    k = np.arange(n + 1)
    w = k * a / n + (1.0 - k / n) / a
    p_a = 1.0 / (1.0 + a)
    beta_n = np.exp(log_binomial_pmf(k, n, p_a))
    # A reverse draw equal to a arises from a forward draw 1/a.
    beta_rev = (a / (1.0 + a)) * np.exp(log_binomial_pmf(k - 1, n - 1, p_a)) \
        + (1.0 / (1.0 + a)) * np.exp(log_binomial_pmf(k, n - 1, p_a))
    fwd = np.sum(beta_n * np.minimum(1.0, w))
    bwd = np.sum(beta_rev * np.minimum(1.0, 1.0 / w))
    return (1.0 - alpha) / 2.0 * (fwd + bwd)


def relaxation_time(p):
    prob = toy_kernel_prob(p)
    if prob <= 0.0:
        raise ValueError('Switch probability is zero; the relaxation time is infinite.')
    return 1.0 / (2.0 * prob)


def absolute_relaxation_time(p):
    """1 / (1 - |lambda_2|); equals relaxation_time whenever lambda_2 >= 0."""
    lam = 1.0 - 2.0 * toy_kernel_prob(p)
    return 1.0 / (1.0 - abs(lam))


def gamma_ratio(a, n, alpha=0.0):
    """Relative burn-in fraction T_relax(N) / T_relax(1) at hold probability alpha.

    The switch probability scales with 1 - alpha, so the ratio does not depend on alpha.
    """
    return relaxation_time(ToyParams(a, alpha, n)) / relaxation_time(ToyParams(a, alpha, 1))


def mixing_time_bounds(eps, t_relax):
    if not 0.0 < eps < 1.0:
        raise ValueError('Mixing tolerance must lie in (0, 1), got {}.'.format(eps))
    return -(t_relax - 1.0) * np.log(2.0 * eps), -t_relax * np.log(eps / 2.0)


def toy_exact_matrix(p):
    prob = toy_kernel_prob(p)
    return np.array([[1.0 - prob, prob], [prob, 1.0 - prob]])


def tv_mixing_time(p, eps, max_steps=100000):
    """Smallest t with max_x TV(P^t(x, .), uniform) <= eps, by repeated matrix products."""
    P = toy_exact_matrix(p)
    Pt = np.eye(2)
    for t in range(1, max_steps + 1):
        Pt = Pt @ P
        if np.max(0.5 * np.abs(Pt - 0.5).sum(axis=1)) <= eps:
            return t
    raise ValueError('Chain did not mix to {} within {} steps.'.format(eps, max_steps))


def gamma_table(a_values, n_values):
    """Rows (a, N, gamma(N)) over the grid a_values x n_values."""
    return [(a, n, gamma_ratio(a, n)) for a in a_values for n in n_values]


def ensemble_toy_curve(p, steps):
    """|P(theta_t = 1) - 1/2| for a chain started at -1: half of |lambda_2|^t."""
    lam = 1.0 - 2.0 * toy_kernel_prob(p)
    return 0.5 * np.abs(lam) ** np.arange(steps)


class ToyTarget(TargetModel):
    latent_descriptor = 'none'

    def log_density(self, theta, z):
        return np.log(0.5) if theta in (-1.0, 1.0) else -np.inf


class ToyProposal(ProposalKernel):
    def __init__(self, alpha=0.0):
        super(ToyProposal, self).__init__()
        self.alpha = alpha

    def sample(self, theta, rng):
        return theta if rng.random() < self.alpha else -theta

    def log_density(self, theta, vartheta):
        if vartheta == theta:
            return np.log(self.alpha) if self.alpha > 0.0 else -np.inf
        return np.log1p(-self.alpha) if vartheta == -theta else -np.inf

    def support(self, theta):
        out = [(-theta, 1.0 - self.alpha)]
        if self.alpha > 0.0:
            out.append((theta, self.alpha))
        return out


class ToyScheme(AuxiliaryScheme):
    """Draws u in {a, 1/a}; the involution inverts u. A proposed stay carries u = 1."""
    def __init__(self, a):
        super(ToyScheme, self).__init__()
        self.a = float(a)

    def sample_u(self, theta, vartheta, z, rng):
        if vartheta == theta:
            return 1.0
        return self.a if rng.random() < 1.0 / (1.0 + self.a) else 1.0 / self.a

    def log_ratio(self, theta, vartheta, z, u):
        return float(np.log(u))

    def phi1(self, theta, vartheta, z, u):
        return z

    def phi2(self, theta, vartheta, z, u):
        return 1.0 / u

    def u_support(self, theta, vartheta, z):
        if vartheta == theta:
            return [(1.0, 1.0)]
        return [(self.a, 1.0 / (1.0 + self.a)), (1.0 / self.a, self.a / (1.0 + self.a))]

    def sample_point(self, rng):
        theta = 1.0 if rng.random() < 0.5 else -1.0
        return theta, (theta if rng.random() < 0.25 else -theta), None


def toy_instance(p):
    """(target, proposal, scheme) of the toy chain for the given parameters."""
    return ToyTarget(), ToyProposal(p.alpha), ToyScheme(p.a)
