#!/usr/bin/env python3
"""
inequality_lab module - tau-paths between correlation matrices, the
coefficients c_M(tau) = -alpha d/dtau |R_tau,M| that drive the monotonicity
arguments, and numerical verification of the resulting cdf inequalities

Four path families are verified:

1. block scaling R_tau = [[R11, tau R12], [tau R21, R22]], 2 alpha integer or > n - 2
2. the same with n1 = n - 1 for infinitely divisible R, any alpha
   (plus the componentwise form diag(1 - tau_i^2) + (tau_i r_ij tau_j))
3. block scaling for m-factorial R, via explicit representations of R_tau
4. the convex path R0 + tau (R - R0) for R > R0 with R0 positive and R0^-1 an
   M-matrix

In each case d/dtau G_alpha(x; R_tau) = sum_M c_M(tau) (prod_{i in M} d/dx_i) G_{alpha+1}(x; R_tau),
which verify_theorem() checks against a finite-difference derivative.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

import factorial_repr as fr
import infinite_divisibility
import series_expansion as se
from linalg_module import CorrMatrix, Partition, det, inv_sqrt, inverse_and_det, sym_eigen
from mc_batches import batch_generator, run_batches, BATCH_SIZE
from mvgamma_errors import (
    HypothesisError,
    InvalidArgumentError,
    MvGammaError,
    NotPositiveDefiniteError,
    NumericalDegeneracyError,
    PathInvalidError,
    SingularMatrixError,
)
from report_store import matrix_digest
from special_functions import check_alpha, gamma_cdf, is_integer_dof

logger = logging.getLogger(__name__)

BLOCK_SCALE = "block-scale"
CONVEX = "convex-combination"
COMPONENTWISE = "componentwise"

DEFAULT_TAU_GRID = (0.0, 0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99, 1.0)
RESIDUAL_TAUS = (0.25, 0.5, 0.75)
FD_STEP = 1e-4
DERIVATIVE_RTOL = 1e-4
DERIVATIVE_ATOL = 1e-10
# tail mass of the tables behind finite differences
DERIVATIVE_SERIES_TOL = 1e-11
# c for finite-difference tables, chosen with some slack so neighbours keep ||Q_hat|| < 1
DERIVATIVE_C_MARGIN = 1.1
COEFF_TOL = 1e-10
HYPOTHESIS_TOL = 1e-12
DEFAULT_EPS_FILL = 1e-3
MC_SIGMAS = 3.0
DEFAULT_SAMPLES = 200_000

SERIES = "series"
MIXTURE = "mixture"
MC = "mc"
METHODS = (SERIES, MIXTURE, MC)

STATUS_PASS = "pass"
STATUS_INDISTINGUISHABLE = "numerically-indistinguishable"
STATUS_INCONCLUSIVE = "inconclusive"
STATUS_HYPOTHESIS = "hypothesis-failure"

ADMISSIBLE = "admissible"
LT_FUNCTION = "lt-function"

CoeffMap = Dict[Tuple[int, ...], float]


@dataclass(frozen=True, eq=False)
class TauPath:
    """
    A one-parameter family of correlation matrices.

    block-scale: R with its off-diagonal blocks (by partition) scaled by tau.
    convex-combination: R0 + tau (R - R0).
    componentwise: diag(1 - tau_i^2) + (tau_i r_ij tau_j) for a tau vector.
    """
    kind: str
    R: CorrMatrix
    partition: Optional[Partition] = None
    R0: Optional[CorrMatrix] = None

    def __post_init__(self):
        if self.kind == BLOCK_SCALE:
            if self.partition is None or self.partition.n != self.R.n:
                raise InvalidArgumentError("block-scale path needs a partition of the matrix dimension")
        elif self.kind == CONVEX:
            if self.R0 is None or self.R0.n != self.R.n:
                raise InvalidArgumentError("convex path needs R0 of the same dimension as R")
        elif self.kind != COMPONENTWISE:
            raise InvalidArgumentError(f"unknown path kind '{self.kind}'")

    @classmethod
    def block_scale(cls, R: CorrMatrix, partition: Partition) -> "TauPath":
        return cls(BLOCK_SCALE, R, partition=partition)

    @classmethod
    def convex(cls, R0: CorrMatrix, R: CorrMatrix) -> "TauPath":
        return cls(CONVEX, R, R0=R0)

    @classmethod
    def componentwise(cls, R: CorrMatrix) -> "TauPath":
        return cls(COMPONENTWISE, R)

    @property
    def n(self) -> int:
        return self.R.n

    def off_block_mask(self) -> np.ndarray:
        mask = np.zeros((self.n, self.n), dtype=bool)
        first, second = list(self.partition.first), list(self.partition.second)
        mask[np.ix_(first, second)] = True
        mask[np.ix_(second, first)] = True
        return mask

    def derivative(self) -> np.ndarray:
        """d R_tau / d tau (constant in tau for the scalar path kinds)"""
        if self.kind == BLOCK_SCALE:
            return np.where(self.off_block_mask(), self.R.entries, 0.0)
        if self.kind == CONVEX:
            return self.R.entries - self.R0.entries
        raise InvalidArgumentError("componentwise paths have no scalar derivative")


def tau_evaluate(path: TauPath, tau) -> CorrMatrix:
    """
    R_tau for tau in [0, 1] (a vector in [0, 1]^n for componentwise paths).

    Raises:
        PathInvalidError: the assembled matrix is not a valid correlation matrix
    """
    t = np.asarray(tau, dtype=float)
    if np.any(t < 0) or np.any(t > 1) or not np.all(np.isfinite(t)):
        raise InvalidArgumentError(f"tau must lie in [0, 1], got {tau}")
    if path.kind == COMPONENTWISE:
        t = np.broadcast_to(t, (path.n,))
        entries = np.outer(t, t) * path.R.entries + np.diag(1.0 - t ** 2)
    else:
        if t.ndim:
            raise InvalidArgumentError("scalar tau expected for this path kind")
        tv = float(t)
        if path.kind == BLOCK_SCALE:
            entries = np.where(path.off_block_mask(), tv * path.R.entries, path.R.entries)
        else:
            entries = path.R0.entries + tv * (path.R.entries - path.R0.entries)
    try:
        return CorrMatrix(entries)
    except (NotPositiveDefiniteError, SingularMatrixError, InvalidArgumentError) as exc:
        raise PathInvalidError(f"{path.kind} path leaves the correlation matrices at tau = {tau}: {exc}")


def counterexample_matrix(tau: float) -> CorrMatrix:
    """
    4 x 4 family whose inverse is an M-matrix at tau = 1 but not at tau = 0.5
    (there r^13 > 0, the other off-diagonal inverse entries are negative).
    """
    if not 0.0 <= tau <= 1.0:
        raise InvalidArgumentError(f"tau must lie in [0, 1], got {tau}")
    r = np.eye(4)
    r[0, 1] = 0.55
    r[2, 3] = 0.52
    r[0, 2] = 0.3 * tau
    r[0, 3] = 0.36 * tau
    r[1, 2] = 0.48 * tau
    r[1, 3] = 0.5 * tau
    return CorrMatrix(np.triu(r) + np.triu(r, 1).T)


def _subsets(n: int, min_size: int = 2):
    for size in range(min_size, n + 1):
        yield from itertools.combinations(range(n), size)


def cm_coefficients(path: TauPath, alpha: float, tau: float) -> CoeffMap:
    """
    c_M(tau) = -alpha |R_tau,M| tr(R_tau,M^-1 dR_M/dtau) for every M with |M| >= 2.

    This is the real form of -alpha d/dtau |R_tau,M| used for every scalar path.
    """
    check_alpha(alpha)
    R_tau = tau_evaluate(path, tau).entries
    dR = path.derivative()
    out: CoeffMap = {}
    for M in _subsets(path.n):
        idx = np.ix_(M, M)
        dRM = dR[idx]
        if not np.any(dRM):
            out[M] = 0.0
            continue
        inv, d = inverse_and_det(R_tau[idx])
        out[M] = -alpha * d * float(np.sum(inv * dRM.T))
    return out


def logdet_fd_coefficients(path: TauPath, alpha: float, tau: float, h: float = FD_STEP) -> CoeffMap:
    """
    Cross-check of cm_coefficients by centered differences of log|R_tau,M|
    (one-sided at the ends of [0, 1]).
    """
    lo, hi = max(0.0, tau - h), min(1.0, tau + h)
    R_lo = tau_evaluate(path, lo).entries
    R_mid = tau_evaluate(path, tau).entries
    R_hi = tau_evaluate(path, hi).entries
    out: CoeffMap = {}
    for M in _subsets(path.n):
        idx = np.ix_(M, M)
        slope = (math.log(det(R_hi[idx])) - math.log(det(R_lo[idx]))) / (hi - lo)
        out[M] = -alpha * det(R_mid[idx]) * slope
    return out


def cm_coefficients_thm1(R: CorrMatrix, part: Partition, alpha: float, tau: float) -> CoeffMap:
    """
    c_M(tau) = 2 alpha tau |R_tau,M| sum_i lambda_i / (1 - tau^2 lambda_i) for
    M = M1 u M2 with both parts non-empty; lambda_i are the squared canonical
    correlations of R_M1 against R_M2.

    Returns:
        map from 0-based index tuples M to c_M(tau) >= 0
    """
    check_alpha(alpha)
    if not 0.0 < tau < 1.0:
        raise InvalidArgumentError(f"tau must lie in (0, 1), got {tau}")
    r = R.entries
    out: CoeffMap = {}
    for s1 in range(1, part.n1 + 1):
        for M1 in itertools.combinations(part.first, s1):
            w1 = inv_sqrt(r[np.ix_(M1, M1)])
            d1 = det(r[np.ix_(M1, M1)])
            for s2 in range(1, part.n2 + 1):
                for M2 in itertools.combinations(part.second, s2):
                    R12 = r[np.ix_(M1, M2)]
                    M = M1 + M2
                    if not np.any(R12):
                        out[M] = 0.0
                        continue
                    R22 = r[np.ix_(M2, M2)]
                    inv22, d2 = inverse_and_det(R22)
                    lam, _ = sym_eigen(w1 @ R12 @ inv22 @ R12.T @ w1)
                    lam = np.clip(lam, 0.0, None)
                    shrink = 1.0 - tau ** 2 * lam
                    if np.any(shrink <= 0):
                        raise NumericalDegeneracyError(
                            f"canonical correlation at or above 1/tau for M = {[i + 1 for i in M]}")
                    det_tau = d1 * d2 * float(np.prod(shrink))
                    out[M] = 2.0 * alpha * tau * det_tau * float(np.sum(lam / shrink))
    return out


def cm_coefficients_thm2(R: CorrMatrix, alpha: float, tau: float) -> CoeffMap:
    """
    c_M(tau) = 2 alpha tau |R_M1| r_M1^t R_M1^-1 r_M1 for M = M1 u {n}, where
    r_M1 = (r_in), i in M1. Does not depend on tau except through the factor tau.
    """
    check_alpha(alpha)
    n = R.n
    r = R.entries
    last = n - 1
    out: CoeffMap = {}
    for s1 in range(1, n):
        for M1 in itertools.combinations(range(last), s1):
            rv = r[list(M1), last]
            inv, d = inverse_and_det(r[np.ix_(M1, M1)])
            out[M1 + (last,)] = 2.0 * alpha * tau * d * float(rv @ inv @ rv)
    return out


def thm4_violations(R0: CorrMatrix, R: CorrMatrix) -> List[str]:
    """Names of the violated conditions among R > R0, r0_ij > 0, r0^ij <= 0"""
    off = ~np.eye(R.n, dtype=bool)
    r0 = R0.entries
    r = R.entries
    failed = []
    if np.any(r0[off] <= 0):
        failed.append("all r0_ij > 0")
    inv0 = R0.inverse()
    if np.any(inv0[off] > HYPOTHESIS_TOL):
        failed.append("r0^ij <= 0 off the diagonal of R0^-1")
    if np.any(r[off] < r0[off] - HYPOTHESIS_TOL):
        failed.append("R >= R0 entrywise")
    elif not np.any(r[off] > r0[off]):
        failed.append("R != R0")
    return failed


def cm_coefficients_thm4(R0: CorrMatrix, R: CorrMatrix, alpha: float, tau: float,
                         check: bool = True) -> CoeffMap:
    """
    c_M(tau) = -alpha |R_tau,M| sum_i lambda_i / (1 + tau lambda_i), lambda_i the
    eigenvalues of Q_M R0_M^-1 with Q = R - R0, for |M| >= 2 (0 for |M| = 1).

    The eigenvalue sum equals tr((R0_M + tau Q_M)^-1 Q_M), which is evaluated
    instead so that no complex arithmetic is needed.

    Raises:
        HypothesisError: check is set and (R0, R) violate the path conditions
    """
    if check:
        failed = thm4_violations(R0, R)
        if failed:
            raise HypothesisError(f"monotonicity hypotheses violated: {', '.join(failed)}",
                                  theorem=4, condition=failed[0])
    coeffs = cm_coefficients(TauPath.convex(R0, R), alpha, tau)
    low = min(coeffs.values(), default=0.0)
    if low < -COEFF_TOL:
        logger.warning("negative path coefficient %.3e", low)
    return coeffs


def epsilon_fill(R0: CorrMatrix, eps: float = DEFAULT_EPS_FILL) -> CorrMatrix:
    """Replace zero off-diagonal entries of R0 by eps"""
    if not eps > 0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    entries = R0.entries.copy()
    off = ~np.eye(R0.n, dtype=bool)
    entries[off & (entries == 0.0)] = eps
    try:
        return CorrMatrix(entries)
    except (NotPositiveDefiniteError, SingularMatrixError) as exc:
        raise InvalidArgumentError(f"eps = {eps} breaks positive definiteness, try a smaller eps ({exc})")


def find_thm4_signature(R0: CorrMatrix, R: CorrMatrix) -> Optional[infinite_divisibility.SignatureMatrix]:
    """First signature S (s_1 = +1, identity first) with (S R0 S, S R S) satisfying the path conditions"""
    n = R.n
    for bits in range(1 << (n - 1)):
        s = infinite_divisibility.SignatureMatrix(
            (1,) + tuple(-1 if bits >> (j - 1) & 1 else 1 for j in range(1, n)))
        if not thm4_violations(R0.signed(s.s), R.signed(s.s)):
            return s
    return None


def random_thm4_pair(n: int, rng: np.random.Generator, max_tries: int = 100) -> Tuple[CorrMatrix, CorrMatrix]:
    """
    Random (R0, R) with R0 one-factorial with positive loadings (so R0^-1 is an
    M-matrix) and R = R0 plus a non-negative perturbation.
    """
    for _ in range(max_tries):
        a = rng.uniform(0.2, 0.8, size=n)
        r0 = np.outer(a, a)
        np.fill_diagonal(r0, 1.0)
        bump = rng.uniform(0.0, 0.2, size=(n, n)) * (1.0 - r0)
        bump = np.triu(bump, 1)
        r = r0 + bump + bump.T
        try:
            return CorrMatrix(r0), CorrMatrix(r)
        except (NotPositiveDefiniteError, SingularMatrixError):
            continue
    raise NumericalDegeneracyError("could not draw a positive definite pair")


@dataclass(frozen=True, eq=False)
class GammaSample:
    draws: np.ndarray
    alpha: float
    R: CorrMatrix
    seed: int

    @property
    def n_samples(self) -> int:
        return self.draws.shape[0]


def _check_nu(nu) -> int:
    if not (float(nu) == int(nu) and int(nu) >= 1):
        raise InvalidArgumentError(f"degree of freedom must be a positive integer, got {nu}")
    return int(nu)


def _gamma_draws(L: np.ndarray, nu: int, rng: np.random.Generator, count: int) -> np.ndarray:
    # Y_j = 1/2 sum_v (X_j^(v))^2, X^(v) ~ N(0, R)
    X = rng.standard_normal((count, nu, L.shape[0])) @ L.T
    return 0.5 * np.sum(X * X, axis=1)


def sample_mvgamma(R: CorrMatrix, nu: int, n_samples: int, seed: int = 0,
                   batch_size: int = BATCH_SIZE) -> GammaSample:
    """n_samples draws of Gamma_n(nu / 2, R) for integer nu, batch streams as in mc_batches"""
    nu = _check_nu(nu)
    if n_samples < 1:
        raise InvalidArgumentError(f"n_samples must be positive, got {n_samples}")
    L = np.linalg.cholesky(R.entries)
    chunks = []
    for batch, start in enumerate(range(0, n_samples, batch_size)):
        count = min(batch_size, n_samples - start)
        chunks.append(_gamma_draws(L, nu, batch_generator(seed, batch), count))
    draws = np.vstack(chunks)
    draws.setflags(write=False)
    return GammaSample(draws, nu / 2.0, R, seed)


def empirical_lower_orthant(sample: GammaSample, x) -> se.CdfEstimate:
    """Fraction of draws with Y_j <= x_j for all j, with its binomial standard error"""
    xa = np.asarray(x, dtype=float).ravel()
    if xa.size != sample.draws.shape[1]:
        raise InvalidArgumentError(f"x has {xa.size} coordinates, sample has {sample.draws.shape[1]}")
    hits = np.all(sample.draws <= xa, axis=1)
    p = float(np.mean(hits))
    stderr = math.sqrt(p * (1.0 - p) / sample.n_samples)
    return se.CdfEstimate(p, stderr, "stderr", MC, {"samples": sample.n_samples, "seed": sample.seed})


def cdf_mc(R: CorrMatrix, alpha: float, x, n_samples: int = DEFAULT_SAMPLES, seed: int = 0,
           threads: Optional[int] = None) -> se.CdfEstimate:
    """Direct Monte Carlo cdf for integer 2 alpha, without keeping the draws"""
    nu = _check_nu(round(2.0 * alpha)) if is_integer_dof(alpha) else _check_nu(2.0 * alpha)
    xa = np.asarray(x, dtype=float).ravel()
    L = np.linalg.cholesky(R.entries)

    def batch(rng: np.random.Generator, count: int) -> np.ndarray:
        return np.all(_gamma_draws(L, nu, rng, count) <= xa, axis=1).astype(float)

    mean, stderr = run_batches(batch, n_samples, seed, threads=threads).scalar()
    return se.CdfEstimate(mean, stderr, "stderr", MC, {"samples": n_samples, "seed": seed})


@dataclass(frozen=True)
class Admissibility:
    label: str
    reasons: Tuple[str, ...]

    @property
    def admissible(self) -> bool:
        return self.label == ADMISSIBLE

    def to_dict(self) -> dict:
        return {"label": self.label, "reasons": list(self.reasons)}


def admissibility(R: CorrMatrix, alpha: float, rep: Optional[fr.FactorialRepr] = None,
                  infdiv: Optional[bool] = None) -> Admissibility:
    """
    Whether G_alpha(.; R) is known to be a cdf: 2 alpha integer, 2 alpha > n - 2,
    an infinitely divisible Laplace transform, or an m-factorial representation
    with 2 alpha > m - 1. Otherwise it is only the function with Laplace
    transform |I + RT|^-alpha |T|^-1.
    """
    check_alpha(alpha)
    reasons = []
    if is_integer_dof(alpha):
        reasons.append("2alpha-integer")
    if 2.0 * alpha > R.n - 2:
        reasons.append("2alpha>n-2")
    if infdiv is None:
        infdiv = infinite_divisibility.bapat_check(R).verdict
    if infdiv:
        reasons.append("infinitely-divisible")
    if rep is not None and (rep.m <= 1 or 2.0 * alpha > rep.m - 1):
        reasons.append(f"{rep.m}-factorial")
    return Admissibility(ADMISSIBLE if reasons else LT_FUNCTION, tuple(reasons))


def _width(est: se.CdfEstimate) -> float:
    return MC_SIGMAS * est.error if est.error_kind == "stderr" else est.error


class CdfEvaluator:
    """
    G_alpha(x_M; R) by the requested methods, with results cached per matrix.

    series: adaptive uniform-c table; mixture: one-factorial quadrature or a
    Wishart mixture over a factorial representation; mc: direct sampling.
    Methods whose preconditions fail are skipped and noted.
    """

    def __init__(self, alpha: float, methods: Sequence[str], samples: int = DEFAULT_SAMPLES,
                 seed: int = 0, tol: float = se.DEFAULT_TOL, threads: Optional[int] = None):
        self.alpha = check_alpha(alpha)
        self.methods = tuple(methods)
        self.samples = samples
        self.seed = seed
        self.tol = tol
        self.threads = threads
        self.notes: List[str] = []

    def _note(self, text: str) -> None:
        if text not in self.notes:
            self.notes.append(text)

    def evaluate(self, R: CorrMatrix, x, rep: Optional[fr.FactorialRepr] = None) -> Dict[str, se.CdfEstimate]:
        xa = np.asarray(x, dtype=float).ravel()
        if R.n == 1:
            exact = se.CdfEstimate(float(gamma_cdf(self.alpha, xa[0])), 0.0, "bracket", "exact")
            return {m: exact for m in self.methods}
        out: Dict[str, se.CdfEstimate] = {}
        for method in self.methods:
            try:
                est = self._one(method, R, xa, rep)
            except MvGammaError as exc:
                self._note(f"{method} unavailable: {exc}")
                continue
            if est is not None:
                out[method] = est
        if not out:
            raise NumericalDegeneracyError(f"no evaluation method available ({'; '.join(self.notes)})")
        return out

    def _one(self, method: str, R: CorrMatrix, xa: np.ndarray,
             rep: Optional[fr.FactorialRepr]) -> Optional[se.CdfEstimate]:
        if method == SERIES:
            est = se.gamma_cdf_series(R, self.alpha, xa, tol=self.tol)
            if not est.meta.get("converged", True):
                self._note("series truncated before reaching the tail tolerance")
            return est
        if method == MIXTURE:
            if rep is None:
                a = fr.detect_one_factorial(R)
                if a is not None:
                    return fr.cdf_one_factorial(a, self.alpha, xa)
                rep = fr.generic_decomposition(R)
            if rep.m == 1 and np.allclose(rep.D + rep.A[:, 0] ** 2, 1.0):
                return fr.cdf_one_factorial(rep.A[:, 0], self.alpha, xa)
            return fr.cdf_mixture_mc(rep, self.alpha, xa, self.samples, self.seed, self.threads)
        if method == MC:
            if not is_integer_dof(self.alpha):
                self._note("mc needs an integer degree of freedom 2 alpha")
                return None
            return cdf_mc(R, self.alpha, xa, self.samples, self.seed, self.threads)
        raise InvalidArgumentError(f"unknown method '{method}', expected one of {METHODS}")


def _primary(estimates: Dict[str, se.CdfEstimate]) -> se.CdfEstimate:
    for method in METHODS:
        if method in estimates:
            return estimates[method]
    return next(iter(estimates.values()))


@dataclass
class DerivativeCheck:
    tau: float
    finite_difference: float
    identity: float
    residual: float
    truncation: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.residual <= self.tolerance

    def to_dict(self) -> dict:
        return {"tau": self.tau, "finite_difference": self.finite_difference, "identity": self.identity,
                "residual": self.residual, "truncation": self.truncation, "tolerance": self.tolerance,
                "ok": self.ok}


def derivative_identity(path: TauPath, alpha: float, x, tau: float, h: float = FD_STEP,
                        coeffs: Optional[CoeffMap] = None) -> DerivativeCheck:
    """
    Compare a Richardson-extrapolated centered difference of G_alpha(x; R_tau)
    with sum_M c_M(tau) (prod_{i in M} d/dx_i) G_{alpha+1}(x; R_tau).

    The tables behind the finite difference share one truncation degree and
    one scale c, so their truncation error varies smoothly with tau.
    """
    if not h < tau < 1.0 - h:
        raise InvalidArgumentError(f"tau = {tau} too close to the ends of [0, 1] for step {h}")
    xa = np.asarray(x, dtype=float).ravel()
    R_tau = tau_evaluate(path, tau)
    c = se.choose_c(R_tau, DERIVATIVE_C_MARGIN)
    base = se.expand_adaptive(R_tau, alpha, tol=DERIVATIVE_SERIES_TOL, c=c)

    def G(t: float) -> float:
        table = se.expand_coefficients(tau_evaluate(path, t), alpha, K=base.max_degree, c=c)
        return se.cdf_from_table(table, xa).value

    d_h = (G(tau + h) - G(tau - h)) / (2.0 * h)
    d_h2 = (G(tau + h / 2) - G(tau - h / 2)) / h
    fd = (4.0 * d_h2 - d_h) / 3.0
    truncation = abs(d_h2 - d_h)

    coeffs = cm_coefficients(path, alpha, tau) if coeffs is None else coeffs
    upper = se.expand_adaptive(R_tau, alpha + 1.0, tol=DERIVATIVE_SERIES_TOL)
    identity = math.fsum(cm * se.mixed_partial_from_table(upper, xa, M)
                         for M, cm in coeffs.items() if cm != 0.0)
    residual = abs(fd - identity)
    tolerance = max(DERIVATIVE_RTOL * max(abs(fd), abs(identity)), 10.0 * truncation, DERIVATIVE_ATOL)
    return DerivativeCheck(tau, fd, identity, residual, truncation, tolerance)


@dataclass
class VerificationReport:
    theorem: int
    status: str
    passed: bool
    alpha: float
    x: List[float]
    methods: List[str]
    tau_grid: List[float] = field(default_factory=list)
    grid: List[Dict] = field(default_factory=list)
    monotone: Optional[bool] = None
    margins: Dict[str, Dict] = field(default_factory=dict)
    endpoint_residual: Optional[Dict] = None
    derivative_checks: List[DerivativeCheck] = field(default_factory=list)
    coefficient_min: Optional[float] = None
    hypotheses: Dict = field(default_factory=dict)
    admissibility: Optional[Admissibility] = None
    notes: List[str] = field(default_factory=list)
    seed: Optional[int] = None
    samples: Optional[int] = None
    input_digest: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "status": self.status,
            "pass": self.passed,
            "alpha": self.alpha,
            "x": self.x,
            "methods": self.methods,
            "tau_grid": self.tau_grid,
            "grid": self.grid,
            "monotone": self.monotone,
            "margins": self.margins,
            "endpoint_residual": self.endpoint_residual,
            "derivative_checks": [d.to_dict() for d in self.derivative_checks],
            "coefficient_min": self.coefficient_min,
            "hypotheses": self.hypotheses,
            "admissibility": None if self.admissibility is None else self.admissibility.to_dict(),
            "notes": self.notes,
            "seed": self.seed,
            "samples": self.samples,
            "input_digest": self.input_digest,
        }


@dataclass
class TheoremInputs:
    """
    R and, depending on the theorem, a partition (1 and 3), R0 (4) and
    factorial representations of R and R22 (3; derived when absent).
    """
    R: CorrMatrix
    partition: Optional[Partition] = None
    R0: Optional[CorrMatrix] = None
    rep: Optional[fr.FactorialRepr] = None
    rep22: Optional[fr.FactorialRepr] = None


def _margin(left: se.CdfEstimate, right_value: float, right_error: float, asserted: bool = True) -> Dict:
    return {"value": left.value - right_value, "error": _width(left) + right_error, "asserted": asserted}


def _product(estimates: Sequence[se.CdfEstimate]) -> Tuple[float, float]:
    value = float(np.prod([e.value for e in estimates]))
    # first-order propagation of the factor errors
    error = sum(_width(e) * abs(value / e.value) if e.value else _width(e) for e in estimates)
    return value, error


def _is_monotone(values: Sequence[se.CdfEstimate]) -> bool:
    return all(b.value - a.value >= -(_width(a) + _width(b)) for a, b in zip(values, values[1:]))


def _factorial_data(R: CorrMatrix, part: Partition, inputs: TheoremInputs):
    rep = inputs.rep
    if rep is None:
        a = fr.detect_one_factorial(R)
        rep = fr.one_factorial_repr(a) if a is not None else fr.generic_decomposition(R)
    rep22 = inputs.rep22
    if rep22 is None:
        R22 = R.marginal(part.second)
        a = fr.detect_one_factorial(R22) if part.n2 > 1 else np.zeros(1)
        rep22 = fr.one_factorial_repr(a) if a is not None else fr.generic_decomposition(R22)
    return rep, rep22


def _check_hypotheses(theorem: int, inputs: TheoremInputs, alpha: float, notes: List[str]):
    """
    Returns:
        (path, checked conditions, failed conditions, extra data)
    """
    R = inputs.R
    n = R.n
    checked: List[str] = []
    failed: List[str] = []
    extra: Dict = {}
    integer = is_integer_dof(alpha)

    if theorem in (1, 3):
        part = inputs.partition or Partition(n, n // 2)
        checked.append("R12 != O")
        if not np.any(R.block(part.first, part.second)):
            failed.append("R12 != O")
        if theorem == 1:
            checked.append("2alpha integer or 2alpha > n - 2")
            if not (integer or 2.0 * alpha > n - 2):
                failed.append("2alpha integer or 2alpha > n - 2")
        else:
            rep, rep22 = _factorial_data(R, part, inputs)
            m, k = rep.m, rep22.m
            extra.update(rep=rep, rep22=rep22)
            checked += ["n >= 4", "1 <= m <= n - 2", "k <= min(m, n2 - 1)", "alpha bound"]
            if n < 4:
                failed.append("n >= 4")
            if not 1 <= m <= n - 2:
                failed.append("1 <= m <= n - 2")
            if k > min(m, part.n2 - 1):
                failed.append("k <= min(m, n2 - 1)")
            if not (integer or 2.0 * alpha > max(0, min(m + k - 3, n - 4))):
                failed.append("alpha bound")
            if not (integer or 2.0 * alpha > max(m - 1, min(m + k - 3, n - 4))):
                notes.append("values off the end points are functions with the given Laplace transform, "
                             "not asserted to be probabilities")
            notes.append(f"factorial ranks m = {m}, k = {k}")
        return TauPath.block_scale(R, part), checked, failed, extra

    if theorem == 2:
        part = Partition(n, n - 1)
        checked += ["r != 0", "infinitely divisible"]
        if not np.any(R.block(part.first, part.second)):
            failed.append("r != 0")
        if not infinite_divisibility.bapat_check(R).verdict:
            failed.append("infinitely divisible")
        return TauPath.block_scale(R, part), checked, failed, extra

    if theorem == 4:
        if inputs.R0 is None:
            raise InvalidArgumentError("theorem 4 needs a start matrix R0")
        R0 = inputs.R0
        checked += ["all r0_ij > 0", "r0^ij <= 0 off the diagonal of R0^-1", "R >= R0 entrywise",
                    "2alpha integer or 2alpha > n - 2"]
        if not (integer or 2.0 * alpha > n - 2):
            failed.append("2alpha integer or 2alpha > n - 2")
        violations = thm4_violations(R0, R)
        if violations:
            signature = find_thm4_signature(R0, R)
            if signature is not None:
                R0, R = R0.signed(signature.s), R.signed(signature.s)
                notes.append(f"applied signature {list(signature.s)}")
                violations = []
        if violations and "all r0_ij > 0" in violations:
            off = ~np.eye(n, dtype=bool)
            if np.all(R0.entries[off] >= 0) and np.all(R.entries[off] > 0):
                try:
                    filled = epsilon_fill(R0, DEFAULT_EPS_FILL)
                except InvalidArgumentError:
                    filled = None
                if filled is not None and not thm4_violations(filled, R):
                    R0 = filled
                    extra["eps"] = DEFAULT_EPS_FILL
                    notes.append(f"zero entries of R0 filled with eps = {DEFAULT_EPS_FILL}")
                    violations = []
        failed += violations
        return TauPath.convex(R0, R), checked, failed, extra

    raise InvalidArgumentError(f"theorem must be 1, 2, 3 or 4, got {theorem}")


def verify_theorem(theorem: int, inputs: TheoremInputs, alpha: float, x,
                   tau_grid: Sequence[float] = DEFAULT_TAU_GRID, method: str = SERIES,
                   samples: int = DEFAULT_SAMPLES, seed: int = 0, componentwise: bool = False,
                   residual_taus: Sequence[float] = RESIDUAL_TAUS, progress: bool = True,
                   threads: Optional[int] = None, tol: float = se.DEFAULT_TOL) -> VerificationReport:
    """
    Evaluate the cdf along the theorem's tau-path and check monotonicity, the
    end-point inequality chain and (for the series method) the derivative identity.

    Args:
        theorem: 1, 2, 3 or 4
        inputs: Matrices and partition
        alpha: Shape
        x: Evaluation point (positive entries)
        tau_grid: Points in [0, 1]
        method: 'series', 'mixture', 'mc' or 'all'
        samples: Monte Carlo draws per evaluation
        seed: Base seed (common to all grid points)
        componentwise: Theorem 2 only: vary each tau_i separately
        residual_taus: Interior points for the derivative identity
        progress: Show a tqdm bar on stderr
        tol: Tail mass target of the series tables

    Returns:
        VerificationReport; hypothesis failures are reported, not raised
    """
    check_alpha(alpha)
    R = inputs.R
    xa = np.asarray(x, dtype=float).ravel()
    if xa.size != R.n:
        raise InvalidArgumentError(f"x has {xa.size} coordinates, matrix dimension is {R.n}")
    if np.any(xa <= 0) or not np.all(np.isfinite(xa)):
        raise InvalidArgumentError("x must have positive finite entries")
    grid = sorted(set(float(t) for t in tau_grid))
    if not grid or grid[0] < 0 or grid[-1] > 1:
        raise InvalidArgumentError("tau grid must be a non-empty subset of [0, 1]")
    methods = list(METHODS) if method == "all" else [method]
    for m in methods:
        if m not in METHODS:
            raise InvalidArgumentError(f"unknown method '{m}', expected one of {METHODS} or 'all'")

    notes: List[str] = []
    path, checked, failed, extra = _check_hypotheses(theorem, inputs, alpha, notes)
    report = VerificationReport(theorem=theorem, status=STATUS_HYPOTHESIS, passed=False, alpha=alpha,
                                x=xa.tolist(), methods=methods, tau_grid=grid, notes=notes,
                                seed=seed, samples=samples,
                                input_digest=matrix_digest(
                                    R.entries, *([inputs.R0.entries] if inputs.R0 is not None else [])),
                                hypotheses={"checked": checked, "failed": failed, **(
                                    {"eps": extra["eps"]} if "eps" in extra else {})})
    if failed:
        logger.info("theorem %d hypotheses failed: %s", theorem, failed)
        return report

    evaluator = CdfEvaluator(alpha, methods, samples, seed, tol=tol, threads=threads)
    report.admissibility = admissibility(R, alpha, extra.get("rep"))

    def rep_at(tau: float) -> Optional[fr.FactorialRepr]:
        if theorem != 3:
            return None
        return fr.tau_factorial_repr(extra["rep"], path.partition, extra["rep22"], tau)

    # cdf along the grid(s)
    grids: List[Tuple[Optional[int], List[se.CdfEstimate]]] = []
    coords = range(R.n) if (theorem == 2 and componentwise) else [None]
    for coord in coords:
        primaries = []
        label = "tau" if coord is None else f"tau_{coord + 1}"
        for tau in tqdm(grid, desc=f"Theorem {theorem} {label}", disable=not progress, leave=False):
            if coord is None:
                R_tau = tau_evaluate(path, tau)
            else:
                tvec = np.ones(R.n)
                tvec[coord] = tau
                R_tau = tau_evaluate(TauPath.componentwise(R), tvec)
            estimates = evaluator.evaluate(R_tau, xa, rep_at(tau) if coord is None else None)
            primaries.append(_primary(estimates))
            report.grid.append({"tau": tau, "coordinate": None if coord is None else coord + 1,
                                **{m: e.to_dict() for m, e in estimates.items()}})
        grids.append((coord, primaries))
    report.monotone = all(_is_monotone(values) for _, values in grids)

    # end-point inequality chain
    main_values = grids[0][1]
    at_one = main_values[grid.index(1.0)] if 1.0 in grid else _primary(evaluator.evaluate(R, xa, rep_at(1.0)))
    indep = [se.CdfEstimate(float(gamma_cdf(alpha, xj)), 0.0, "bracket", "exact") for xj in xa]
    indep_value, _ = _product(indep)
    if theorem == 4:
        at_zero = (main_values[0] if grid[0] == 0.0
                   else _primary(evaluator.evaluate(path.R0, xa)))
        report.margins["end_points"] = _margin(at_one, at_zero.value, _width(at_zero))
    else:
        part = path.partition
        blocks = [_primary(evaluator.evaluate(R.marginal(members), xa[list(members)]))
                  for members in (part.first, part.second)]
        block_value, block_error = _product(blocks)
        report.margins["joint_vs_blocks"] = _margin(at_one, block_value, block_error)
        report.margins["blocks_vs_independent"] = {
            "value": block_value - indep_value, "error": block_error, "asserted": theorem in (1, 2)}
        if grid[0] == 0.0:
            at_zero = main_values[0]
            report.endpoint_residual = {"value": at_zero.value - block_value,
                                        "error": _width(at_zero) + block_error}

    # coefficients and derivative identity
    scalar_taus = [t for t in residual_taus if FD_STEP < t < 1.0 - FD_STEP]
    coefficient_min = None
    for tau in scalar_taus:
        if theorem == 1:
            coeffs = cm_coefficients_thm1(R, path.partition, alpha, tau)
        elif theorem == 2:
            coeffs = cm_coefficients_thm2(R, alpha, tau)
        elif theorem == 4:
            coeffs = cm_coefficients_thm4(path.R0, path.R, alpha, tau, check=False)
        else:
            coeffs = cm_coefficients(path, alpha, tau)
        low = min(coeffs.values(), default=0.0)
        coefficient_min = low if coefficient_min is None else min(coefficient_min, low)
        if SERIES in methods:
            try:
                report.derivative_checks.append(derivative_identity(path, alpha, xa, tau, coeffs=coeffs))
            except MvGammaError as exc:
                notes.append(f"derivative identity skipped at tau = {tau}: {exc}")
    report.coefficient_min = coefficient_min
    notes.extend(n for n in evaluator.notes if n not in notes)

    # verdict
    asserted = [m for m in report.margins.values() if m["asserted"]]
    negative = any(m["value"] < -m["error"] for m in asserted)
    bad_derivative = any(not d.ok for d in report.derivative_checks)
    bad_coefficient = coefficient_min is not None and coefficient_min < -COEFF_TOL
    if negative or not report.monotone or bad_derivative or bad_coefficient:
        report.status = STATUS_INCONCLUSIVE
    elif all(m["value"] > m["error"] for m in asserted):
        report.status = STATUS_PASS
    else:
        report.status = STATUS_INDISTINGUISHABLE
    report.passed = report.status in (STATUS_PASS, STATUS_INDISTINGUISHABLE)
    logger.info("theorem %d: %s", theorem, report.status)
    return report
