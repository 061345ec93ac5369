import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

import factorial_repr as fr
import inequality_lab as lab
import series_expansion as se
from linalg_module import CorrMatrix, Partition, equicorrelated
from mvgamma_errors import HypothesisError, InvalidArgumentError


@pytest.fixture
def thm4_pair():
    """R0 one-factorial with positive loadings, R = R0 + 0.1 off the diagonal"""
    a = np.array([0.4, 0.5, 0.45])
    r0 = np.outer(a, a)
    np.fill_diagonal(r0, 1.0)
    r = r0 + 0.1 * (1.0 - np.eye(3))
    return CorrMatrix(r0), CorrMatrix(r)


def test_block_scale_path(mild4):
    path = lab.TauPath.block_scale(mild4, Partition(4, 2))
    assert_allclose(lab.tau_evaluate(path, 1.0).entries, mild4.entries)
    at_zero = lab.tau_evaluate(path, 0.0).entries
    assert_allclose(at_zero[:2, 2:], 0.0)
    assert_allclose(at_zero[:2, :2], mild4.entries[:2, :2])
    half = lab.tau_evaluate(path, 0.5).entries
    assert half[0, 3] == pytest.approx(0.075)
    assert half[0, 1] == pytest.approx(0.3)


def test_convex_and_componentwise_paths(thm4_pair, mild3):
    R0, R = thm4_pair
    mid = lab.tau_evaluate(lab.TauPath.convex(R0, R), 0.5).entries
    assert_allclose(mid, 0.5 * (R0.entries + R.entries))

    comp = lab.tau_evaluate(lab.TauPath.componentwise(mild3), [1.0, 0.5, 1.0]).entries
    assert comp[0, 1] == pytest.approx(0.15)
    assert comp[0, 2] == pytest.approx(0.2)
    assert_allclose(np.diag(comp), 1.0)


def test_tau_out_of_range(mild3):
    path = lab.TauPath.block_scale(mild3, Partition(3, 1))
    for tau in (-0.1, 1.5, math.nan):
        with pytest.raises(InvalidArgumentError):
            lab.tau_evaluate(path, tau)


def test_scalar_path_rejects_vector_tau():
    path = lab.TauPath.convex(CorrMatrix(np.eye(2)), CorrMatrix([[1.0, 0.5], [0.5, 1.0]]))
    with pytest.raises(InvalidArgumentError):
        lab.tau_evaluate(path, [0.5, 0.5])


def test_path_kind_checks(mild3):
    with pytest.raises(InvalidArgumentError):
        lab.TauPath("spiral", mild3)
    with pytest.raises(InvalidArgumentError):
        lab.TauPath.block_scale(mild3, Partition(4, 2))
    with pytest.raises(InvalidArgumentError):
        lab.TauPath.componentwise(mild3).derivative()


def test_counterexample_matrix():
    assert lab.counterexample_matrix(0.5).entries[0, 2] == pytest.approx(0.15)
    assert lab.counterexample_matrix(0.0).entries[1, 3] == 0.0
    with pytest.raises(InvalidArgumentError):
        lab.counterexample_matrix(1.2)


@pytest.mark.parametrize("alpha, r, tau", [(0.5, 0.6, 0.3), (1.7, -0.4, 0.8)])
def test_thm1_two_dimensions(alpha, r, tau):
    R = CorrMatrix([[1.0, r], [r, 1.0]])
    coeffs = lab.cm_coefficients_thm1(R, Partition(2, 1), alpha, tau)
    assert coeffs == pytest.approx({(0, 1): 2.0 * alpha * tau * r * r})


def test_thm1_matches_general_coefficients(mild4):
    part = Partition(4, 2)
    special = lab.cm_coefficients_thm1(mild4, part, 0.5, 0.6)
    general = lab.cm_coefficients(lab.TauPath.block_scale(mild4, part), 0.5, 0.6)
    for M, value in general.items():
        assert special.get(M, 0.0) == pytest.approx(value, abs=1e-12)
    assert all(v >= 0 for v in special.values())


def test_thm1_needs_interior_tau(mild4):
    with pytest.raises(InvalidArgumentError):
        lab.cm_coefficients_thm1(mild4, Partition(4, 2), 0.5, 1.0)


def test_thm2_matches_thm1_with_last_variable(mild4):
    thm2 = lab.cm_coefficients_thm2(mild4, 0.8, 0.4)
    thm1 = lab.cm_coefficients_thm1(mild4, Partition(4, 3), 0.8, 0.4)
    assert set(thm2) == set(thm1)
    for M in thm2:
        assert thm2[M] == pytest.approx(thm1[M], rel=1e-10)


def test_finite_difference_cross_check(mild4):
    path = lab.TauPath.block_scale(mild4, Partition(4, 1))
    exact = lab.cm_coefficients(path, 0.5, 0.5)
    approx = lab.logdet_fd_coefficients(path, 0.5, 0.5)
    for M in exact:
        assert approx[M] == pytest.approx(exact[M], rel=1e-6, abs=1e-12)


def test_thm4_two_dimensions():
    alpha, tau = 0.5, 0.5
    R0 = CorrMatrix([[1.0, 0.3], [0.3, 1.0]])
    R = CorrMatrix([[1.0, 0.5], [0.5, 1.0]])
    coeffs = lab.cm_coefficients_thm4(R0, R, alpha, tau)
    assert coeffs[(0, 1)] == pytest.approx(2.0 * alpha * (0.3 + 0.2 * tau) * 0.2)


def test_thm4_identical_matrices_give_zero(thm4_pair):
    R0, _ = thm4_pair
    coeffs = lab.cm_coefficients_thm4(R0, R0, 0.5, 0.5, check=False)
    assert all(v == 0.0 for v in coeffs.values())
    assert lab.thm4_violations(R0, R0) == ["R != R0"]


def test_thm4_violations():
    R0 = CorrMatrix([[1.0, -0.2, 0.3], [-0.2, 1.0, 0.3], [0.3, 0.3, 1.0]])
    R = CorrMatrix(R0.entries + 0.05 * (1.0 - np.eye(3)))
    assert "all r0_ij > 0" in lab.thm4_violations(R0, R)
    with pytest.raises(HypothesisError) as info:
        lab.cm_coefficients_thm4(R0, R, 0.5, 0.5)
    assert info.value.condition == "all r0_ij > 0"
    assert info.value.theorem == 4


def test_thm4_coefficients_are_nonnegative(rng):
    for _ in range(10):
        R0, R = lab.random_thm4_pair(4, rng)
        assert lab.thm4_violations(R0, R) == []
        for tau in (0.1, 0.5, 0.9):
            coeffs = lab.cm_coefficients_thm4(R0, R, 0.5, tau)
            assert min(coeffs.values()) >= -lab.COEFF_TOL


def test_find_thm4_signature(thm4_pair):
    R0, R = thm4_pair
    s = [1, -1, 1]
    found = lab.find_thm4_signature(R0.signed(s), R.signed(s))
    assert found is not None
    assert found.s == (1, -1, 1)
    assert lab.find_thm4_signature(R0, R).s == (1, 1, 1)


def test_epsilon_fill():
    filled = lab.epsilon_fill(CorrMatrix(np.eye(3)), 0.01)
    assert_allclose(filled.entries, equicorrelated(3, 0.01).entries)
    unchanged = lab.epsilon_fill(equicorrelated(3, 0.2), 0.01)
    assert_allclose(unchanged.entries, equicorrelated(3, 0.2).entries)
    with pytest.raises(InvalidArgumentError):
        lab.epsilon_fill(CorrMatrix(np.eye(3)), 0.0)


def test_sample_mvgamma_marginals():
    sample = lab.sample_mvgamma(equicorrelated(3, 0.5), 1, 20000, seed=4)
    assert sample.draws.shape == (20000, 3)
    assert not sample.draws.flags.writeable
    assert sample.alpha == 0.5
    ks = stats.kstest(sample.draws[:, 0], "gamma", args=(0.5,))
    assert ks.statistic < 1.95 / math.sqrt(20000)
    # corr(Y_i, Y_j) = r_ij^2
    assert np.corrcoef(sample.draws[:, 0], sample.draws[:, 1])[0, 1] == pytest.approx(0.25, abs=0.03)


def test_sample_mvgamma_needs_integer_dof():
    with pytest.raises(InvalidArgumentError):
        lab.sample_mvgamma(CorrMatrix(np.eye(2)), 1.5, 10)


def test_empirical_lower_orthant():
    sample = lab.sample_mvgamma(CorrMatrix(np.eye(2)), 2, 1000, seed=1)
    assert lab.empirical_lower_orthant(sample, [0.0, 0.0]).value == 0.0
    assert lab.empirical_lower_orthant(sample, [1e6, 1e6]).value == 1.0


def test_monte_carlo_matches_series():
    R = CorrMatrix([[1.0, 0.5], [0.5, 1.0]])
    x = [0.5, 0.5]
    series = se.gamma_cdf_series(R, 0.5, x)
    mc = lab.cdf_mc(R, 0.5, x, n_samples=100000, seed=2)
    assert mc.error_kind == "stderr"
    assert abs(mc.value - series.value) <= 4.0 * mc.error


def test_admissibility_labels():
    R = lab.counterexample_matrix(0.5)
    assert lab.admissibility(R, 0.5).label == lab.ADMISSIBLE
    assert "2alpha-integer" in lab.admissibility(R, 0.5).reasons
    verdict = lab.admissibility(R, 0.3)
    assert verdict.label == lab.LT_FUNCTION
    assert not verdict.admissible
    rep = fr.one_factorial_repr([0.5, 0.4, 0.3, 0.2])
    assert "1-factorial" in lab.admissibility(R, 0.3, rep=rep).reasons
    assert lab.admissibility(R, 1.2).reasons == ("2alpha>n-2",)


def test_evaluator_one_dimension():
    evaluator = lab.CdfEvaluator(0.5, [lab.SERIES, lab.MC])
    result = evaluator.evaluate(CorrMatrix(np.eye(1)), [1.0])
    assert result[lab.SERIES].value == pytest.approx(stats.gamma.cdf(1.0, 0.5))
    assert result[lab.MC].method == "exact"


def test_evaluator_methods_agree(one_factorial3):
    evaluator = lab.CdfEvaluator(0.5, lab.METHODS, samples=40000, seed=8)
    result = evaluator.evaluate(one_factorial3, [1.0, 1.0, 1.0])
    assert set(result) == set(lab.METHODS)
    assert result[lab.MIXTURE].method == "one-factorial"
    assert result[lab.MIXTURE].value == pytest.approx(result[lab.SERIES].value, abs=1e-6)
    assert abs(result[lab.MC].value - result[lab.SERIES].value) <= 4.0 * result[lab.MC].error


def test_evaluator_skips_mc_for_fractional_dof(one_factorial3):
    evaluator = lab.CdfEvaluator(0.3, [lab.SERIES, lab.MC])
    result = evaluator.evaluate(one_factorial3, [1.0, 1.0, 1.0])
    assert set(result) == {lab.SERIES}
    assert any("integer degree of freedom" in note for note in evaluator.notes)


def test_derivative_identity_block_scale(mild3):
    path = lab.TauPath.block_scale(mild3, Partition(3, 1))
    check = lab.derivative_identity(path, 0.5, [1.0, 1.5, 0.8], 0.5)
    assert check.ok, check.to_dict()
    assert check.identity > 0


def test_derivative_identity_convex(thm4_pair):
    R0, R = thm4_pair
    path = lab.TauPath.convex(R0, R)
    coeffs = lab.cm_coefficients_thm4(R0, R, 1.0, 0.4)
    check = lab.derivative_identity(path, 1.0, [0.7, 1.2, 2.0], 0.4, coeffs=coeffs)
    assert check.ok, check.to_dict()
    assert check.identity > 0


def test_derivative_identity_needs_interior_tau(mild3):
    path = lab.TauPath.block_scale(mild3, Partition(3, 1))
    with pytest.raises(InvalidArgumentError):
        lab.derivative_identity(path, 0.5, [1.0, 1.0, 1.0], 1.0)


def convex_pair(loadings, shift):
    a = np.asarray(loadings)
    r0 = np.outer(a, a)
    np.fill_diagonal(r0, 1.0)
    return CorrMatrix(r0), CorrMatrix(r0 + shift * (1.0 - np.eye(a.size)))


BLOCK_SCALE_CASES = [
    ("mild3", 1, 0.5, [1.0, 1.5, 0.8], 0.5),
    ("mild3", 2, 1.0, [0.7, 1.2, 2.0], 0.3),
    ("mild4", 2, 0.5, [1.0, 1.0, 1.0, 1.0], 0.5),
    ("mild4", 1, 1.5, [1.5, 0.9, 1.2, 2.0], 0.7),
    ("mild4", 3, 2.0, [2.0, 2.5, 1.8, 3.0], 0.25),
]

CONVEX_CASES = [
    ((0.4, 0.5, 0.45), 0.1, 1.0, [0.7, 1.2, 2.0], 0.4),
    ((0.4, 0.5, 0.45), 0.1, 0.5, [1.0, 1.0, 1.0], 0.6),
    ((0.3, 0.35, 0.4, 0.3), 0.1, 1.0, [1.0, 1.2, 0.8, 1.5], 0.5),
    ((0.5, 0.3, 0.4), 0.05, 1.5, [1.5, 2.0, 1.2], 0.3),
    ((0.3, 0.35, 0.4, 0.3), 0.15, 0.5, [0.9, 0.9, 0.9, 0.9], 0.75),
]


@pytest.mark.slow
@pytest.mark.parametrize("matrix, n1, alpha, x, tau", BLOCK_SCALE_CASES)
def test_derivative_identity_block_scale_table(request, matrix, n1, alpha, x, tau):
    R = request.getfixturevalue(matrix)
    part = Partition(R.n, n1)
    coeffs = lab.cm_coefficients_thm1(R, part, alpha, tau)
    check = lab.derivative_identity(lab.TauPath.block_scale(R, part), alpha, x, tau, coeffs=coeffs)
    assert check.ok, check.to_dict()
    assert check.identity > 0


@pytest.mark.slow
@pytest.mark.parametrize("loadings, shift, alpha, x, tau", CONVEX_CASES)
def test_derivative_identity_convex_table(loadings, shift, alpha, x, tau):
    R0, R = convex_pair(loadings, shift)
    coeffs = lab.cm_coefficients_thm4(R0, R, alpha, tau)
    check = lab.derivative_identity(lab.TauPath.convex(R0, R), alpha, x, tau, coeffs=coeffs)
    assert check.ok, check.to_dict()
    assert check.identity > 0


def test_verify_theorem1(mild4):
    report = lab.verify_theorem(1, lab.TheoremInputs(mild4, Partition(4, 2)), 0.5, [1.0, 1.0, 1.0, 1.0],
                                tau_grid=(0.0, 0.5, 1.0), residual_taus=(0.5,), progress=False)
    assert report.passed
    assert report.status == lab.STATUS_PASS
    assert report.monotone
    residual = report.endpoint_residual
    assert abs(residual["value"]) <= residual["error"] + 1e-7
    assert report.margins["joint_vs_blocks"]["value"] > 0
    assert report.coefficient_min >= 0
    assert all(d.ok for d in report.derivative_checks)
    assert report.input_digest is not None
    assert report.to_dict()["pass"] is True


def test_verify_theorem2(one_factorial3):
    report = lab.verify_theorem(2, lab.TheoremInputs(one_factorial3), 0.3, [1.0, 1.0, 1.0],
                                tau_grid=(0.0, 0.5, 1.0), residual_taus=(0.5,), progress=False)
    assert report.status == lab.STATUS_PASS
    assert report.admissibility.admissible
    assert report.margins["blocks_vs_independent"]["asserted"]


def test_verify_theorem2_componentwise(one_factorial3):
    report = lab.verify_theorem(2, lab.TheoremInputs(one_factorial3), 0.5, [1.0, 1.0, 1.0],
                                tau_grid=(0.0, 1.0), residual_taus=(), componentwise=True,
                                progress=False)
    assert report.monotone
    assert {row["coordinate"] for row in report.grid} == {1, 2, 3}


def test_verify_theorem4(thm4_pair):
    R0, R = thm4_pair
    report = lab.verify_theorem(4, lab.TheoremInputs(R, R0=R0), 0.5, [1.0, 1.0, 1.0],
                                tau_grid=(0.0, 0.5, 1.0), residual_taus=(0.5,), progress=False)
    assert report.passed
    assert report.margins["end_points"]["value"] > 0
    assert report.hypotheses["failed"] == []


def test_verify_theorem4_hypothesis_failure():
    R0 = CorrMatrix([[1.0, -0.2, 0.3], [-0.2, 1.0, 0.3], [0.3, 0.3, 1.0]])
    R = CorrMatrix(R0.entries + 0.05 * (1.0 - np.eye(3)))
    report = lab.verify_theorem(4, lab.TheoremInputs(R, R0=R0), 0.5, [1.0, 1.0, 1.0], progress=False)
    assert report.status == lab.STATUS_HYPOTHESIS
    assert not report.passed
    assert "all r0_ij > 0" in report.hypotheses["failed"]
    assert report.grid == []


def test_verify_theorem1_rejects_fractional_alpha():
    R = lab.counterexample_matrix(0.5)
    report = lab.verify_theorem(1, lab.TheoremInputs(R, Partition(4, 2)), 0.3, [1.0] * 4, progress=False)
    assert report.status == lab.STATUS_HYPOTHESIS
    assert report.hypotheses["failed"] == ["2alpha integer or 2alpha > n - 2"]


def test_verify_theorem_argument_checks(mild3):
    inputs = lab.TheoremInputs(mild3)
    with pytest.raises(InvalidArgumentError):
        lab.verify_theorem(1, inputs, 0.5, [1.0, 1.0], progress=False)
    with pytest.raises(InvalidArgumentError):
        lab.verify_theorem(1, inputs, 0.5, [1.0, 0.0, 1.0], progress=False)
    with pytest.raises(InvalidArgumentError):
        lab.verify_theorem(1, inputs, 0.5, [1.0, 1.0, 1.0], tau_grid=(0.0, 2.0), progress=False)
    with pytest.raises(InvalidArgumentError):
        lab.verify_theorem(5, inputs, 0.5, [1.0, 1.0, 1.0], progress=False)
    with pytest.raises(InvalidArgumentError):
        lab.verify_theorem(4, inputs, 0.5, [1.0, 1.0, 1.0], progress=False)


@pytest.mark.slow
def test_verify_theorem3():
    # one-factorial R (m = 1) on 4 variables, blocks 2 | 2
    a = np.array([0.5, 0.4, 0.6, 0.3])
    r = np.outer(a, a)
    np.fill_diagonal(r, 1.0)
    report = lab.verify_theorem(3, lab.TheoremInputs(CorrMatrix(r), Partition(4, 2)), 1.0, [1.0] * 4,
                                tau_grid=(0.0, 0.5, 1.0), method=lab.MIXTURE, samples=20000, seed=6,
                                residual_taus=(), progress=False)
    assert report.hypotheses["failed"] == []
    assert report.monotone
    assert report.passed
