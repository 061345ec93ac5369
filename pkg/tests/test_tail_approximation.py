import math

import numpy as np
import pytest

import tail_approximation as ta
from factorial_repr import cdf_one_factorial
from linalg_module import CorrMatrix, Partition, equicorrelated
from mvgamma_errors import InvalidArgumentError


def random_perturbation(n, rng, scale=0.05):
    h = np.triu(rng.uniform(-scale, scale, size=(n, n)), 1)
    return ta.PerturbationH(h + h.T)


@pytest.mark.parametrize("n", [3, 4, 5, 7])
def test_h4_row_sum_identity(rng, n):
    h = random_perturbation(n, rng)
    assert h.H4 == pytest.approx(h.H4_enumerated(), abs=1e-14)
    assert h.H2 >= 0


def test_h4_vanishes_for_three_variables(rng):
    assert random_perturbation(3, rng).H4 == pytest.approx(0.0, abs=1e-15)


def test_h4_single_pair():
    h = np.zeros((4, 4))
    h[0, 1] = h[1, 0] = 0.1
    h[2, 3] = h[3, 2] = -0.2
    H = ta.PerturbationH(h)
    assert H.H2 == pytest.approx(0.05)
    # the two disjoint pairs are counted in both orders
    assert H.H4 == pytest.approx(2 * 0.1 * -0.2)


def test_perturbation_validation():
    with pytest.raises(InvalidArgumentError):
        ta.PerturbationH(np.array([[0.0, 0.1], [0.2, 0.0]]))
    with pytest.raises(InvalidArgumentError):
        ta.PerturbationH(np.eye(2))


def test_perturbation_from_matrix():
    R = CorrMatrix([[1.0, 0.3, 0.2], [0.3, 1.0, 0.4], [0.2, 0.4, 1.0]])
    r, H = ta.perturbation_from_matrix(R)
    assert r == pytest.approx(0.3)
    assert np.sum(np.triu(H.h, 1)) == pytest.approx(0.0, abs=1e-15)
    assert H.H2 == pytest.approx(0.02)


@pytest.mark.parametrize("alpha, n, r, x", [(0.5, 3, 0.25, 1.0), (1.5, 4, 0.4, 2.0), (0.3, 5, 0.6, 0.7)])
def test_equicorrelated_cdf_matches_one_factorial(alpha, n, r, x):
    value = ta.equicorrelated_cdf(alpha, n, r, x)
    expected = cdf_one_factorial(np.full(n, math.sqrt(r)), alpha, np.full(n, x))
    assert value.value == pytest.approx(expected.value, abs=1e-8)


def test_ck_zero_is_the_block_cdf():
    ck = ta.ck_integral(1.5, 0.5, 3, 0.4, 0)
    assert ck.value == pytest.approx(ta.equicorrelated_cdf(0.5, 3, 0.4, 1.5).value, abs=1e-12)


@pytest.mark.parametrize("k", [1, 2, 5])
def test_ck_vanishes_for_large_x(k):
    assert ta.ck_integral(200.0, 0.5, 3, 0.4, k).value == pytest.approx(0.0, abs=1e-8)


def test_ck_vanishes_for_weak_correlation():
    assert abs(ta.ck_integral(2.0, 1.0, 3, 1e-6, 1).value) < 1e-4


def test_ck_quadrature_converges():
    assert ta.ck_integral(2.0, 0.5, 3, 0.4, 1).converged


def test_block_product_without_cross_correlation():
    summary = ta.EquicorrelatedSummary(2, 3, 0.3, 0.4, 0.0)
    approx = ta.approx_equicorrelated_product(1.5, 0.5, summary, kmax=5)
    assert approx.value == approx.head
    blocks = approx.meta["block_cdfs"]
    assert blocks[0] == pytest.approx(ta.equicorrelated_cdf(0.5, 2, 0.3, 1.5).value, abs=1e-12)
    assert blocks[1] == pytest.approx(ta.equicorrelated_cdf(0.5, 3, 0.4, 1.5).value, abs=1e-12)


def test_block_product_is_exact_for_equicorrelated_matrix():
    # rbar1 = rbar2 = sqrt(rbar^2): the correction rebuilds the full equicorrelated cdf
    R = equicorrelated(4, 0.3)
    summary = ta.summarize_blocks(R, Partition(4, 2))
    assert summary.ratio() == pytest.approx(1.0)
    approx = ta.approx_equicorrelated_product(4.0, 0.5, summary, kmax=8)
    exact = cdf_one_factorial(np.full(4, math.sqrt(0.3)), 0.5, np.full(4, 4.0))
    assert approx.value == pytest.approx(exact.value, abs=1e-3)
    assert approx.value > approx.head


def test_block_product_domain():
    with pytest.raises(InvalidArgumentError):
        ta.approx_equicorrelated_product(1.0, 0.5, ta.EquicorrelatedSummary(2, 2, 0.2, 0.2, 0.09))
    with pytest.raises(InvalidArgumentError):
        ta.EquicorrelatedSummary(1, 3, 0.2, 0.2, 0.01)
    with pytest.raises(InvalidArgumentError):
        ta.EquicorrelatedSummary(2, 3, 0.0, 0.2, 0.01)
    mean = ta.EquicorrelatedSummary(2, 2, 0.5, 0.5, 0.04, 0.1)
    assert mean.ratio(ta.MEAN) == pytest.approx(0.04)
    with pytest.raises(InvalidArgumentError):
        ta.EquicorrelatedSummary(2, 2, 0.5, 0.5, 0.04).ratio(ta.MEAN)


def test_summarize_blocks():
    summary = ta.summarize_blocks(equicorrelated(5, 0.2), Partition(5, 2))
    assert (summary.n1, summary.n2) == (2, 3)
    assert summary.rbar1 == pytest.approx(0.2)
    assert summary.rbar2 == pytest.approx(0.2)
    assert summary.rbar_sq == pytest.approx(0.04)
    assert summary.rbar_cross == pytest.approx(0.2)


def test_lambda_weak_correlation_limit():
    coeffs = ta.lambda_condition(0.5, 5, 1e-6, 2.0)
    assert coeffs.c1 > 0
    assert abs(coeffs.c2) < 1e-4
    assert abs(coeffs.c3) < 1e-8
    assert coeffs.value == pytest.approx(coeffs.c1, abs=1e-4)
    assert coeffs.positive


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.5])
def test_c1_nonnegative(alpha):
    assert ta.lambda_condition(alpha, 4, 0.3, 1.5).c1 >= 0


def test_lambda_three_variables():
    coeffs = ta.lambda_condition(0.5, 3, 0.3, 2.0)
    assert coeffs.meta["c3_tail_flag"] is False
    assert coeffs.value == pytest.approx(coeffs.c1 - coeffs.c2)
    payload = coeffs.to_dict()
    assert payload["lambda"] == pytest.approx(coeffs.value)
    assert payload["n"] == 3


def test_lambda_needs_three_variables():
    with pytest.raises(InvalidArgumentError):
        ta.lambda_condition(0.5, 2, 0.3, 1.0)
    with pytest.raises(InvalidArgumentError):
        ta.lambda_condition(0.5, 4, 1.0, 1.0)


@pytest.mark.parametrize("z, r, n", [(2.0, 0.3, 5), (1.5, 0.5, 4), (2.5, 0.2, 6)])
def test_normal_case_matches_gamma_route(z, r, n):
    normal = ta.normal_case_coefficients(z, r, n)
    gamma = ta.lambda_condition(0.5, n, r, z * z / 2.0)
    assert normal.converged
    for name in ("c1", "c2", "c3"):
        assert getattr(normal, name) == pytest.approx(getattr(gamma, name), rel=1e-5, abs=1e-6)


def test_normal_case_needs_four_variables():
    with pytest.raises(InvalidArgumentError):
        ta.normal_case_coefficients(2.0, 0.3, 3)


def test_t2_at_zero_perturbation():
    t2 = ta.taylor_t2(0.5, 4, 0.3, 2.0, ta.PerturbationH.zeros(4))
    assert t2.value == ta.equicorrelated_cdf(0.5, 4, 0.3, 2.0).value
    assert t2.terms == (0.0, 0.0)


def test_t2_reads_off_coefficients():
    coeffs = ta.LambdaCoefficients(c1=0.3, c2=0.1, c3=0.05, n=4)
    h = np.zeros((4, 4))
    h[0, 1] = h[1, 0] = 0.02
    H = ta.PerturbationH(h)
    t2 = ta.taylor_t2(0.5, 4, 0.3, 2.0, H, coefficients=coeffs)
    assert t2.value - t2.head == pytest.approx((0.3 - 0.1) * 0.02 ** 2)
    assert t2.meta["H4"] == pytest.approx(0.0, abs=1e-15)


def test_t2_dimension_check():
    with pytest.raises(InvalidArgumentError):
        ta.taylor_t2(0.5, 4, 0.3, 2.0, ta.PerturbationH.zeros(3))


@pytest.mark.parametrize("kind, params", [
    ("c1", {"alpha": 0.5, "n": 4, "r": 0.3, "x": 2.0}),
    ("ck", {"alpha": 0.5, "ni": 3, "rbar": 0.4, "x": 1.5, "k": 2}),
    ("normal-c2", {"z": 2.0, "r": 0.3, "n": 5}),
])
def test_dump_integrand(tmp_path, kind, params):
    path = tmp_path / f"{kind}.dat"
    rows = ta.dump_integrand(kind, params, str(path), points=50)
    assert rows == 50
    lines = path.read_text().splitlines()
    assert lines[0] == f"# integrand {kind}"
    data = np.loadtxt(path)
    assert data.shape == (50, 2)
    assert np.all(np.diff(data[:, 0]) > 0)
    assert np.all(np.isfinite(data[:, 1]))


def test_unknown_integrand(tmp_path):
    with pytest.raises(InvalidArgumentError):
        ta.dump_integrand("c9", {}, str(tmp_path / "x.dat"))
    assert list(tmp_path.iterdir()) == []
