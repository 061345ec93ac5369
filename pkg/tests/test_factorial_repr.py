import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate, special, stats

import factorial_repr as fr
from linalg_module import CorrMatrix, Partition, equicorrelated, random_corr_matrix
from mvgamma_errors import InvalidArgumentError


def test_detect_one_factorial_equicorrelated():
    a = fr.detect_one_factorial(equicorrelated(4, 0.4))
    assert_allclose(a, np.full(4, math.sqrt(0.4)))


def test_detect_one_factorial_with_signs():
    a = np.array([0.3, -0.6, 0.5])
    r = np.outer(a, a)
    np.fill_diagonal(r, 1.0)
    found = fr.detect_one_factorial(CorrMatrix(r))
    assert found is not None
    assert found[0] > 0
    off = ~np.eye(3, dtype=bool)
    assert_allclose(np.outer(found, found)[off], r[off], atol=1e-12)


def test_detect_one_factorial_rejects():
    R = CorrMatrix([[1.0, 0.5, 0.1], [0.5, 1.0, 0.5], [0.1, 0.5, 1.0]])
    assert fr.detect_one_factorial(R) is None


def test_detect_small_dimensions():
    assert_allclose(fr.detect_one_factorial(CorrMatrix(np.eye(1))), [0.0])
    a = fr.detect_one_factorial(CorrMatrix([[1.0, -0.36], [-0.36, 1.0]]))
    assert_allclose(a, [0.6, -0.6])


@pytest.mark.parametrize("a", [
    [math.sqrt(0.3), math.sqrt(0.3), 0.0],
    [0.6, 0.5, 0.0, 0.0],
    [0.0, 0.7, 0.0, -0.4],
])
def test_detect_one_factorial_single_pair(a):
    a = np.array(a)
    r = np.outer(a, a)
    np.fill_diagonal(r, 1.0)
    found = fr.detect_one_factorial(CorrMatrix(r))
    assert found is not None
    assert_allclose(np.abs(found), np.abs(a), atol=1e-12)
    assert_allclose(np.outer(found, found)[~np.eye(a.size, dtype=bool)], r[~np.eye(a.size, dtype=bool)], atol=1e-12)


def test_detect_one_factorial_pair_plus_isolated():
    found = fr.detect_one_factorial(CorrMatrix([[1.0, 0.3, 0.0], [0.3, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    assert_allclose(found, [math.sqrt(0.3), math.sqrt(0.3), 0.0])
    assert fr.one_factorial_repr(found).m == 1


def test_detect_one_factorial_rejects_chain():
    # 1-2 and 2-3 correlated, 1-3 not: no single factor reproduces it
    R = CorrMatrix([[1.0, 0.3, 0.0], [0.3, 1.0, 0.3], [0.0, 0.3, 1.0]])
    assert fr.detect_one_factorial(R) is None


def test_detect_one_factorial_rejects_two_pairs():
    R = CorrMatrix([[1.0, 0.3, 0.0, 0.0], [0.3, 1.0, 0.0, 0.0],
                    [0.0, 0.0, 1.0, 0.2], [0.0, 0.0, 0.2, 1.0]])
    assert fr.detect_one_factorial(R) is None


def test_one_factorial_repr():
    rep = fr.one_factorial_repr([0.5, 0.2, -0.4])
    assert rep.m == 1
    assert_allclose(np.diag(rep.reconstruct()), 1.0)
    assert fr.one_factorial_repr(np.zeros(3)).m == 0
    with pytest.raises(InvalidArgumentError):
        fr.one_factorial_repr([1.0, 0.2])


def test_generic_decomposition_reconstructs(rng):
    R = random_corr_matrix(5, rng)
    rep = fr.generic_decomposition(R)
    assert rep.reconstruction_error(R) < 1e-10
    assert rep.m <= R.n - 1
    assert_allclose(rep.D, R.min_eigenvalue)
    shrunk = fr.generic_decomposition(R, shrink=0.1)
    assert shrunk.m == R.n
    assert shrunk.reconstruction_error(R) < 1e-10


def test_factorial_repr_validation():
    with pytest.raises(InvalidArgumentError):
        fr.FactorialRepr(np.array([1.0, 0.0]), np.ones((2, 1)))
    with pytest.raises(InvalidArgumentError):
        fr.FactorialRepr(np.ones(2), np.array([[1.0, 1.0], [1.0, 1.0]]))
    compressed = fr.FactorialRepr.compressed(np.ones(2), np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert compressed.m == 1
    assert_allclose(compressed.A @ compressed.A.T, [[2.0, 2.0], [2.0, 2.0]])
    assert set(compressed.to_dict()) == {"m", "D", "A"}


@pytest.mark.parametrize("tau", [0.0, 0.3, 0.8, 1.0])
def test_tau_factorial_repr(rng, tau):
    R = random_corr_matrix(4, rng, extra_dof=4)
    part = Partition(4, 2)
    rep = fr.generic_decomposition(R)
    rep22 = fr.generic_decomposition(R.marginal(part.second))
    expected = R.entries.copy()
    expected[:2, 2:] *= tau
    expected[2:, :2] *= tau
    rep_tau = fr.tau_factorial_repr(rep, part, rep22, tau)
    assert_allclose(rep_tau.reconstruct(), expected, atol=1e-10)


def test_tau_factorial_repr_checks_shapes(mild4):
    rep = fr.generic_decomposition(mild4)
    with pytest.raises(InvalidArgumentError):
        fr.tau_factorial_repr(rep, Partition(4, 2), rep, 0.5)
    with pytest.raises(InvalidArgumentError):
        fr.tau_factorial_repr(rep, Partition(4, 2), fr.generic_decomposition(mild4.marginal([2, 3])), 1.5)


def test_one_factorial_cdf_with_zero_loadings():
    estimate = fr.cdf_one_factorial(np.zeros(3), 0.5, [1.0, 2.0, 3.0])
    assert estimate.value == pytest.approx(float(np.prod(stats.gamma.cdf([1.0, 2.0, 3.0], 0.5))), rel=1e-12)
    assert fr.cdf_one_factorial([0.5, 0.5], 0.5, [0.0, 1.0]).value == 0.0


def test_one_factorial_cdf_bivariate_exponential():
    # Kibble bivariate exponential with correlation rho = r_12^2, integrated directly
    rho = 0.25 ** 2
    x = 1.0

    def density(v, u):
        scale = 1.0 / (1.0 - rho)
        return scale * math.exp(-(u + v) * scale) * special.i0(2.0 * math.sqrt(rho * u * v) * scale)

    expected, _ = integrate.dblquad(density, 0.0, x, 0.0, x, epsabs=1e-12)
    estimate = fr.cdf_one_factorial([0.5, 0.5], 1.0, [x, x])
    assert estimate.value == pytest.approx(expected, abs=1e-8)


KIMBALL_LOADINGS = np.array([0.5, 0.4, 0.6, 0.3])
KIMBALL_X = np.array([1.0, 1.5, 0.8, 2.0])


@pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0, 2.0])
@pytest.mark.parametrize("n1", [1, 2, 3])
def test_one_factorial_cdf_exceeds_block_product(alpha, n1):
    a, x = KIMBALL_LOADINGS, KIMBALL_X
    joint = fr.cdf_one_factorial(a, alpha, x).value
    blocks = fr.cdf_one_factorial(a[:n1], alpha, x[:n1]).value * fr.cdf_one_factorial(a[n1:], alpha, x[n1:]).value
    assert joint > blocks + 1e-6


@pytest.mark.parametrize("alpha", [0.25, 1.0])
def test_one_factorial_cdf_factorizes_without_cross_correlation(alpha):
    a = np.array([0.5, 0.4, 0.0, 0.0])
    joint = fr.cdf_one_factorial(a, alpha, KIMBALL_X).value
    blocks = (fr.cdf_one_factorial(a[:2], alpha, KIMBALL_X[:2]).value
              * float(np.prod(stats.gamma.cdf(KIMBALL_X[2:], alpha))))
    assert joint == pytest.approx(blocks, abs=1e-9)


@pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0, 2.0])
@pytest.mark.parametrize("j", [0, 2])
def test_one_factorial_cdf_nondecreasing_in_x(alpha, j):
    values = []
    for xj in np.linspace(0.2, 4.0, 8):
        x = KIMBALL_X.copy()
        x[j] = xj
        values.append(fr.cdf_one_factorial(KIMBALL_LOADINGS, alpha, x).value)
    assert np.all(np.diff(values) >= -1e-10)


@pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0, 2.0])
@pytest.mark.parametrize("j", [0, 3])
def test_one_factorial_cdf_monotone_in_loading(alpha, j):
    # |a_j| = 0 gives the factorized cdf; growing |a_j| only adds dependence
    values = []
    for aj in np.linspace(0.0, 0.9, 7):
        a = KIMBALL_LOADINGS.copy()
        a[j] = -aj if j == 3 else aj
        values.append(fr.cdf_one_factorial(a, alpha, KIMBALL_X).value)
    assert np.all(np.diff(values) >= -1e-10)
    assert values[-1] > values[0]


def test_wishart_dof_rule():
    fr.check_wishart_dof(1.0, 3)
    fr.check_wishart_dof(2.5, 3)
    with pytest.raises(InvalidArgumentError):
        fr.check_wishart_dof(0.5, 3)
    with pytest.raises(InvalidArgumentError):
        fr.check_wishart_dof(1.5, 3)


@pytest.mark.parametrize("dof", [2.0, 2.5])
def test_wishart_mean(rng, dof):
    draws = fr.wishart_draws(dof, 2, rng, 20000)
    assert draws.shape == (20000, 2, 2)
    assert_allclose(draws.mean(axis=0), dof * np.eye(2), atol=0.1)
    assert_allclose(draws, np.transpose(draws, (0, 2, 1)))


def test_sample_wishart_pseudo(rng):
    # dof 1 < m - 1: a rank-one outer product
    sample = fr.sample_wishart(1.0, 3, rng)
    assert sample.m == 3
    assert sample.dof == 1.0
    eigenvalues = np.linalg.eigvalsh(sample.S)
    assert eigenvalues[-1] > 0
    assert_allclose(eigenvalues[:2], 0.0, atol=1e-10)


def test_mixture_mc_matches_quadrature(one_factorial3):
    x = [1.0, 1.5, 2.0]
    rep = fr.one_factorial_repr([0.5, 0.5, 0.5])
    exact = fr.cdf_one_factorial([0.5, 0.5, 0.5], 0.5, x)
    estimate = fr.cdf_mixture_mc(rep, 0.5, x, n_samples=40000, seed=3)
    assert estimate.error_kind == "stderr"
    assert abs(estimate.value - exact.value) <= 4.0 * estimate.error


def test_mixture_mc_is_reproducible(one_factorial3):
    rep = fr.generic_decomposition(one_factorial3)
    first = fr.cdf_mixture_mc(rep, 1.5, [1.0, 1.0, 1.0], n_samples=5000, seed=11, threads=1)
    second = fr.cdf_mixture_mc(rep, 1.5, [1.0, 1.0, 1.0], n_samples=5000, seed=11, threads=3)
    assert first.value == second.value
    assert first.error == second.error


def test_mixture_mc_without_factors():
    rep = fr.FactorialRepr(np.ones(2), np.zeros((2, 0)))
    estimate = fr.cdf_mixture_mc(rep, 0.5, [1.0, 2.0], n_samples=10)
    assert estimate.value == pytest.approx(float(np.prod(stats.gamma.cdf([1.0, 2.0], 0.5))))
    assert estimate.error == 0.0
