#!/usr/bin/env python3
"""
tail_approximation module - approximations of G_alpha(x, ..., x; R) for
identical arguments

- block-product approximation: product of the two block cdfs plus a
  Laguerre-series correction with coefficients c_k
- lambda condition c1 + (n - 4) c2 - (n - 3) c3 > 0 for a local comparison
  with the equicorrelated matrix of mean correlation r
- second degree Taylor polynomial T2 in the deviations h_ij = r_ij - r
- the normal special case P{max |Z_j| <= z} of the lambda coefficients

All integrals are over the gamma weight g_alpha(y) dy, with
F(y) = G_alpha(x / (1 - r), r y / (1 - r)).
"""

import itertools
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import special

from linalg_module import CorrMatrix, Partition
from mvgamma_errors import InvalidArgumentError
from quadrature import DEFAULT_NODES, DEFAULT_TOL, QuadratureResult, finite_integral, gamma_expectation
from special_functions import (
    check_alpha,
    erf,
    gamma_pdf,
    laguerre,
    noncentral_gamma_cdf,
    noncentral_gamma_pdf,
)

logger = logging.getLogger(__name__)

MEAN_SQUARE = "mean-square"
MEAN = "mean"
CROSS_STATISTICS = (MEAN_SQUARE, MEAN)

DEFAULT_KMAX = 20
# log-decay below the peak at the upper limit of the normal-case integrals
NORMAL_LOG_DECAY = 80.0
TAIL_DECAY_TOL = 1e-12
DUMP_POINTS = 400

INTEGRAND_KINDS = ("c1", "c2", "c3", "ck", "normal-c1", "normal-c2", "normal-c3")


@dataclass(frozen=True)
class EquicorrelatedSummary:
    """
    Block sizes and correlation means of a two-block matrix.

    rbar_sq is the mean of the squared cross-block correlations, rbar_cross
    their plain mean (used only by the 'mean' cross statistic).
    """
    n1: int
    n2: int
    rbar1: float
    rbar2: float
    rbar_sq: float
    rbar_cross: Optional[float] = None

    def __post_init__(self):
        if self.n1 < 2 or self.n2 < 2:
            raise InvalidArgumentError(f"both blocks need at least 2 variables, got {self.n1} and {self.n2}")
        for name in ("rbar1", "rbar2"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise InvalidArgumentError(f"{name} must lie in (0, 1), got {value}")
        if self.rbar_sq < 0:
            raise InvalidArgumentError(f"rbar_sq must be >= 0, got {self.rbar_sq}")

    def ratio(self, statistic: str = MEAN_SQUARE) -> float:
        """(rbar1 rbar2)^-1 times the cross statistic"""
        if statistic == MEAN_SQUARE:
            cross = self.rbar_sq
        elif statistic == MEAN:
            if self.rbar_cross is None:
                raise InvalidArgumentError("the 'mean' statistic needs rbar_cross")
            cross = self.rbar_cross ** 2
        else:
            raise InvalidArgumentError(f"unknown cross statistic '{statistic}', expected one of {CROSS_STATISTICS}")
        return cross / (self.rbar1 * self.rbar2)

    def to_dict(self) -> dict:
        return {"n1": self.n1, "n2": self.n2, "rbar1": self.rbar1, "rbar2": self.rbar2,
                "rbar_sq": self.rbar_sq, "rbar_cross": self.rbar_cross}


@dataclass(frozen=True, eq=False)
class PerturbationH:
    """Symmetric deviations h_ij = r_ij - r with zero diagonal"""
    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise InvalidArgumentError(f"H must be square, got shape {h.shape}")
        if np.max(np.abs(h - h.T), initial=0.0) > 1e-12:
            raise InvalidArgumentError("H must be symmetric")
        if np.any(np.diag(h) != 0):
            raise InvalidArgumentError("H must have a zero diagonal")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @classmethod
    def zeros(cls, n: int) -> "PerturbationH":
        return cls(np.zeros((n, n)))

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def H2(self) -> float:
        """sum over i < j of h_ij^2"""
        return float(np.sum(np.triu(self.h, 1) ** 2))

    @property
    def H4(self) -> float:
        """
        sum of h_ij h_km over (i < j, k < m) with {i, j} and {k, m} disjoint,
        both orders of the two pairs included. Evaluated through row sums:
        s^2 - sum_i rho_i^2 + H2 with s = sum_{i<j} h_ij, rho_i = sum_j h_ij.
        """
        s = float(np.sum(np.triu(self.h, 1)))
        rho = self.h.sum(axis=1)
        return s * s - float(rho @ rho) + self.H2

    def H4_enumerated(self) -> float:
        pairs = list(itertools.combinations(range(self.n), 2))
        return math.fsum(self.h[p] * self.h[q] for p in pairs for q in pairs if not set(p) & set(q))

    def to_dict(self) -> dict:
        return {"H2": self.H2, "H4": self.H4}


@dataclass(frozen=True)
class LambdaCoefficients:
    c1: float
    c2: float
    c3: float
    n: int
    converged: bool = True
    meta: Dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        """lambda = c1 + (n - 4) c2 - (n - 3) c3"""
        return self.c1 + (self.n - 4) * self.c2 - (self.n - 3) * self.c3

    @property
    def positive(self) -> bool:
        return self.value > 0

    def to_dict(self) -> dict:
        return {"c1": self.c1, "c2": self.c2, "c3": self.c3, "lambda": self.value,
                "lambda_positive": self.positive, "n": self.n, "converged": self.converged, **self.meta}


@dataclass(frozen=True)
class TailApproximation:
    value: float
    head: float
    terms: Tuple[float, ...]
    converged: bool
    meta: Dict = field(default_factory=dict)

    @property
    def last_term(self) -> float:
        return abs(self.terms[-1]) if self.terms else 0.0

    def to_dict(self) -> dict:
        return {"value": self.value, "head": self.head, "last_term": self.last_term,
                "kmax": len(self.terms), "terms": list(self.terms), "converged": self.converged, **self.meta}


def _check_r(r: float, name: str = "r") -> float:
    if not 0.0 < r < 1.0:
        raise InvalidArgumentError(f"{name} must lie in (0, 1), got {r}")
    return float(r)


def _check_x(x: float) -> float:
    if not (x > 0 and math.isfinite(x)):
        raise InvalidArgumentError(f"x must be positive and finite, got {x}")
    return float(x)


class _Mixture:
    """F, f1 and f2 as functions of the mixing variable y for fixed (alpha, r, x)"""

    def __init__(self, alpha: float, r: float, x: float):
        self.alpha = check_alpha(alpha)
        self.r = _check_r(r)
        self.x = _check_x(x)
        self.X = x / (1.0 - r)

    def _Y(self, y: np.ndarray) -> np.ndarray:
        return self.r * np.asarray(y, dtype=float) / (1.0 - self.r)

    def F(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(noncentral_gamma_cdf(self.alpha, self.X, self._Y(y)))

    def f1(self, y: np.ndarray) -> np.ndarray:
        """d/dx G_{alpha+1}(x / (1 - r), Y)"""
        return np.asarray(noncentral_gamma_pdf(self.alpha + 1.0, self.X, self._Y(y))) / (1.0 - self.r)

    def f2(self, y: np.ndarray) -> np.ndarray:
        """d^2/dx^2 G_{alpha+2}(x / (1 - r), Y), from d/dX g_b = g_{b-1} - g_b"""
        Y = self._Y(y)
        diff = (np.asarray(noncentral_gamma_pdf(self.alpha + 1.0, self.X, Y))
                - np.asarray(noncentral_gamma_pdf(self.alpha + 2.0, self.X, Y)))
        return diff / (1.0 - self.r) ** 2


def _power(F: np.ndarray, p: int) -> Tuple[np.ndarray, np.ndarray]:
    """F^p, and a mask of the points where it is finite (F^-1 at F = 0 is not)"""
    if p >= 0:
        return F ** p, np.ones(F.shape, dtype=bool)
    ok = F > 0
    out = np.zeros_like(F)
    out[ok] = np.exp(p * np.log(F[ok]))
    return out, ok


def _lambda_integrands(alpha: float, n: int, r: float, x: float) -> Dict[str, Callable]:
    mix = _Mixture(alpha, r, x)

    def c1(y):
        f1, f2 = mix.f1(y), mix.f2(y)
        Fp, _ = _power(mix.F(y), n - 2)
        return ((alpha - 0.5) * f1 ** 2 + 0.5 * (2.0 * r * y * f2 - f1) ** 2) * Fp

    def c2(y):
        f1, f2 = mix.f1(y), mix.f2(y)
        Fp, _ = _power(mix.F(y), n - 3)
        return r * y * f1 ** 2 * (2.0 * r * y * f2 - f1) * Fp

    def c3(y):
        f1 = mix.f1(y)
        Fp, ok = _power(mix.F(y), n - 4)
        # where F underflows, f1 (a density of the same mixture) has underflowed too
        return np.where(ok, 2.0 * r * r * y ** 2 * f1 ** 4 * Fp, 0.0)

    return {"c1": c1, "c2": c2, "c3": c3}


def _tail_decays(func: Callable, alpha: float) -> bool:
    """func(y) g_alpha(y) is negligible far out in the gamma tail"""
    y = np.linspace(40.0 + alpha, 80.0 + 2.0 * alpha, 16)
    values = np.abs(np.asarray(func(y), dtype=float)) * gamma_pdf(alpha, y)
    return bool(np.all(np.isfinite(values)) and values.max() <= TAIL_DECAY_TOL)


def ck_integral(x: float, alpha: float, ni: int, rbar: float, k: int,
                nodes: int = DEFAULT_NODES, tol: float = DEFAULT_TOL) -> QuadratureResult:
    """
    c_k = Gamma(alpha) k! / Gamma(alpha + k) * int F^ni L_k^(alpha-1)(y) g_alpha(y) dy
    for a block of ni variables with mean correlation rbar. k = 0 gives the
    block cdf itself.
    """
    check_alpha(alpha)
    _check_x(x)
    _check_r(rbar, "rbar")
    if k < 0 or ni < 1:
        raise InvalidArgumentError(f"need k >= 0 and ni >= 1, got k={k}, ni={ni}")
    mix = _Mixture(alpha, rbar, x)
    result = gamma_expectation(lambda y: mix.F(y) ** ni * laguerre(k, alpha - 1.0, y), alpha, nodes, tol)
    norm = math.exp(special.gammaln(alpha) + special.gammaln(k + 1.0) - special.gammaln(alpha + k))
    return QuadratureResult(result.value * norm, result.error * norm, result.nodes,
                            result.converged, result.method)


def approx_equicorrelated_product(x: float, alpha: float, summary: EquicorrelatedSummary,
                                  kmax: int = DEFAULT_KMAX, cross_statistic: str = MEAN_SQUARE,
                                  nodes: int = DEFAULT_NODES, tol: float = DEFAULT_TOL) -> TailApproximation:
    """
    G(x..x; R11) G(x..x; R22)
      + sum_{k=1..kmax} Gamma(alpha + k) / (Gamma(alpha) k!) rho^k c_k(n1, rbar1) c_k(n2, rbar2)

    with rho = (rbar1 rbar2)^-1 rbar^2; each block cdf is the equicorrelated
    one-factorial integral.

    Raises:
        InvalidArgumentError: rho > 1 or kmax < 1
    """
    check_alpha(alpha)
    if kmax < 1:
        raise InvalidArgumentError(f"kmax must be >= 1, got {kmax}")
    rho = summary.ratio(cross_statistic)
    if rho > 1.0:
        raise InvalidArgumentError(
            f"cross statistic exceeds rbar1 * rbar2 (ratio {rho:.4f}), outside the approximation's domain")

    converged = True
    coeffs: List[Tuple[float, float]] = []
    for k in range(kmax + 1):
        q1 = ck_integral(x, alpha, summary.n1, summary.rbar1, k, nodes, tol)
        q2 = ck_integral(x, alpha, summary.n2, summary.rbar2, k, nodes, tol)
        converged = converged and q1.converged and q2.converged
        coeffs.append((q1.value, q2.value))

    head = coeffs[0][0] * coeffs[0][1]
    terms = []
    for k in range(1, kmax + 1):
        weight = math.exp(special.gammaln(alpha + k) - special.gammaln(alpha) - special.gammaln(k + 1.0))
        terms.append(weight * rho ** k * coeffs[k][0] * coeffs[k][1])
    value = head + math.fsum(terms)
    if not converged:
        logger.warning("some c_k quadratures did not converge")
    return TailApproximation(value, head, tuple(terms), converged,
                             {"ratio": rho, "cross_statistic": cross_statistic,
                              "block_cdfs": [coeffs[0][0], coeffs[0][1]]})


def summarize_blocks(R: CorrMatrix, partition: Partition) -> EquicorrelatedSummary:
    r = R.entries
    first, second = list(partition.first), list(partition.second)

    def within(members):
        block = r[np.ix_(members, members)]
        return float(np.mean(block[np.triu_indices(len(members), 1)]))

    cross = r[np.ix_(first, second)]
    return EquicorrelatedSummary(partition.n1, partition.n2, within(first), within(second),
                                 float(np.mean(cross ** 2)), float(np.mean(cross)))


def perturbation_from_matrix(R: CorrMatrix) -> Tuple[float, PerturbationH]:
    """Mean off-diagonal correlation r and the deviations from it"""
    if R.n < 2:
        raise InvalidArgumentError("need at least two variables")
    off = ~np.eye(R.n, dtype=bool)
    r = float(np.mean(R.entries[off]))
    h = np.where(off, R.entries - r, 0.0)
    return r, PerturbationH(h)


def lambda_condition(alpha: float, n: int, r: float, x: float,
                     nodes: int = DEFAULT_NODES, tol: float = DEFAULT_TOL) -> LambdaCoefficients:
    """
    c1, c2, c3 as gamma-weighted integrals of F, f1 = d/dx G_{alpha+1} and
    f2 = d^2/dx^2 G_{alpha+2}, all at (x / (1 - r), r y / (1 - r)).

    For n = 3 the c3 integrand carries F^-1; its tail decay is checked and a
    failure is reported as meta['c3_tail_flag'].
    """
    check_alpha(alpha)
    if n < 3:
        raise InvalidArgumentError(f"n must be >= 3, got {n}")
    integrands = _lambda_integrands(alpha, n, r, x)
    results = {name: gamma_expectation(func, alpha, nodes, tol) for name, func in integrands.items()}
    converged = all(q.converged for q in results.values())
    meta = {"quadrature": {name: q.to_dict() for name, q in results.items()}}
    if n == 3:
        meta["c3_tail_flag"] = not _tail_decays(integrands["c3"], alpha)
        if meta["c3_tail_flag"]:
            logger.warning("c3 integrand with F^-1 does not decay numerically")
    if not converged:
        logger.warning("lambda quadratures did not converge for alpha=%s n=%d r=%s x=%s", alpha, n, r, x)
    return LambdaCoefficients(results["c1"].value, results["c2"].value, results["c3"].value, n,
                              converged, meta)


def equicorrelated_cdf(alpha: float, n: int, r: float, x: float,
                       nodes: int = DEFAULT_NODES, tol: float = DEFAULT_TOL) -> QuadratureResult:
    """int F^n g_alpha(y) dy = G_alpha(x, ..., x; R) for all r_ij = r"""
    mix = _Mixture(alpha, r, x)
    return gamma_expectation(lambda y: mix.F(y) ** n, alpha, nodes, tol)


def taylor_t2(alpha: float, n: int, r: float, x: float, h: PerturbationH,
              coefficients: Optional[LambdaCoefficients] = None,
              nodes: int = DEFAULT_NODES, tol: float = DEFAULT_TOL) -> TailApproximation:
    """T2 = int F^n g_alpha dy + (c1 - c2) H2 + (c3 - c2) H4"""
    if h.n != n:
        raise InvalidArgumentError(f"H is {h.n} x {h.n}, expected n = {n}")
    base = equicorrelated_cdf(alpha, n, r, x, nodes, tol)
    if coefficients is None:
        coefficients = lambda_condition(alpha, n, r, x, nodes, tol)
    c = coefficients
    terms = ((c.c1 - c.c2) * h.H2, (c.c3 - c.c2) * h.H4)
    return TailApproximation(base.value + math.fsum(terms), base.value, terms,
                             base.converged and c.converged,
                             {"H2": h.H2, "H4": h.H4, "c1": c.c1, "c2": c.c2, "c3": c.c3})


class _NormalCase:
    """Integrands of the normal-case coefficients in the normal scale variable y"""

    def __init__(self, z: float, r: float, n: int):
        if not (z > 0 and math.isfinite(z)):
            raise InvalidArgumentError(f"z must be positive and finite, got {z}")
        if n < 4:
            raise InvalidArgumentError(f"the normal-case coefficients need n >= 4, got {n}")
        self.z = z
        self.r = _check_r(r)
        self.n = n
        self.sr = math.sqrt(r)

    def F(self, y: np.ndarray) -> np.ndarray:
        scale = math.sqrt(2.0 * (1.0 - self.r))
        return 0.5 * (erf((self.z + self.sr * y) / scale) + erf((self.z - self.sr * y) / scale))

    def _parts(self, y: np.ndarray, k: int):
        """
        exp(E_k(y) + k t) and the scaled sinh/cosh s, c with sinh t = e^t s,
        cosh t = e^t c, where t = sqrt(r) y z / (1 - r).
        """
        r, z = self.r, self.z
        t = self.sr * y * z / (1.0 - r)
        exponent = -(k * z * z + (1.0 + (k - 1) * r) * y * y) / (2.0 * (1.0 - r)) + k * t
        e = np.exp(-2.0 * t)
        return np.exp(exponent), 0.5 * (1.0 - e), 0.5 * (1.0 + e)

    def c1(self, y):
        w, s, c = self._parts(y, 2)
        return w * (y * self.sr * s - self.z * c) ** 2 * self.F(y) ** (self.n - 2)

    def c2(self, y):
        w, s, c = self._parts(y, 3)
        return w * (y * self.sr * s - self.z * c) * s * s * self.F(y) ** (self.n - 3)

    def c3(self, y):
        w, s, _ = self._parts(y, 4)
        return w * s ** 4 * self.F(y) ** (self.n - 4)

    def upper(self, k: int) -> float:
        a = (1.0 + (k - 1) * self.r) / (2.0 * (1.0 - self.r))
        b = k * self.sr * self.z / (1.0 - self.r)
        return max(b / (2.0 * a), 0.0) + math.sqrt(NORMAL_LOG_DECAY / a)

    def prefactors(self) -> Tuple[float, float, float]:
        r = self.r
        return (math.sqrt(2.0) * math.pi ** -1.5 * (1.0 - r) ** -3,
                2.0 * math.pi ** -2 * (1.0 - r) ** -2.5,
                2.0 ** 1.5 * math.pi ** -2.5 * (1.0 - r) ** -2)


def normal_case_coefficients(z: float, r: float, n: int, nodes: int = 2 * DEFAULT_NODES,
                             tol: float = DEFAULT_TOL) -> LambdaCoefficients:
    """
    c1, c2, c3 for P{max |Z_j| <= z}, Z ~ N(0, R) near the equicorrelated R,
    as integrals in erf, sinh and cosh. They equal lambda_condition(1/2, n, r, z^2 / 2).
    """
    case = _NormalCase(z, r, n)
    pre = case.prefactors()
    results = {}
    for k, (name, func) in enumerate((("c1", case.c1), ("c2", case.c2), ("c3", case.c3)), start=2):
        results[name] = finite_integral(func, case.upper(k), nodes, tol)
    values = [pre[i] * results[name].value for i, name in enumerate(("c1", "c2", "c3"))]
    converged = all(q.converged for q in results.values())
    if not converged:
        logger.warning("normal-case quadratures did not converge for z=%s r=%s n=%d", z, r, n)
    return LambdaCoefficients(values[0], values[1], values[2], n, converged,
                              {"quadrature": {name: q.to_dict() for name, q in results.items()}})


def _integrand_for(kind: str, params: Dict) -> Tuple[Callable, float, Optional[float]]:
    """(integrand, upper plotting limit, gamma weight shape or None)"""
    if kind in ("c1", "c2", "c3"):
        alpha = params["alpha"]
        func = _lambda_integrands(alpha, int(params["n"]), params["r"], params["x"])[kind]
        return func, params.get("upper", 30.0 + 2.0 * alpha), alpha
    if kind == "ck":
        alpha, k = params["alpha"], int(params["k"])
        mix = _Mixture(alpha, params["rbar"], params["x"])
        ni = int(params["ni"])
        return (lambda y: mix.F(y) ** ni * laguerre(k, alpha - 1.0, y),
                params.get("upper", 30.0 + 2.0 * alpha + 2.0 * k), alpha)
    if kind.startswith("normal-"):
        case = _NormalCase(params["z"], params["r"], int(params["n"]))
        index = int(kind[-1])
        pre = case.prefactors()[index - 1]
        func = getattr(case, kind[len("normal-"):])
        return (lambda y: pre * func(y)), params.get("upper", case.upper(index + 1)), None
    raise InvalidArgumentError(f"unknown integrand kind '{kind}', expected one of {INTEGRAND_KINDS}")


def integrand_table(kind: str, params: Dict, points: int = DUMP_POINTS) -> np.ndarray:
    """(points x 2) array of y and the full integrand including its weight"""
    func, upper, weight_shape = _integrand_for(kind, params)
    y = np.linspace(upper / points, upper, points)
    values = np.asarray(func(y), dtype=float)
    if weight_shape is not None:
        values = values * gamma_pdf(weight_shape, y)
    return np.column_stack([y, values])


def dump_integrand(kind: str, params: Dict, path: str, points: int = DUMP_POINTS) -> int:
    """
    Write the integrand on a grid as two space-separated columns with
    '#'-prefixed header lines. The file is replaced atomically.

    Returns:
        Number of data rows written
    """
    table = integrand_table(kind, params, points)
    header = [f"integrand {kind}"] + [f"{k} = {v}" for k, v in sorted(params.items())] + ["y value"]
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".integrand-", dir=directory)
    try:
        with os.fdopen(fd, "w") as handle:
            np.savetxt(handle, table, fmt="%.12e", header="\n".join(header), comments="# ")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.info("wrote %d rows of integrand %s to %s", len(table), kind, path)
    return len(table)
