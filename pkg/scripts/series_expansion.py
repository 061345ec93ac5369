#!/usr/bin/env python3
"""
series_expansion module - Coefficient tables q(alpha; k_1..k_n) and the
Gamma_n(alpha, R) cdf as a mixture of products of univariate gamma cdfs

With Q = c^-1 R^-1 (uniform-c variant) or the unit-diagonal
Q = diag(r^jj)^-1/2 R^-1 diag(r^jj)^-1/2 (normalized-Q variant) and
Q_hat = Q - I, the Laplace transform expands as

    |I + RT|^-alpha = |Q|^alpha |I + Q_hat Z|^-alpha prod z_j^alpha
                    = sum_k q(alpha; k) prod z_j^(alpha + k_j)

and Laplace inversion gives G(x; R) = sum_k q(alpha; k) prod G_{alpha+k_j}(s_j x_j).

The default coefficient route exponentiates -alpha log|I + Q_hat Z| degree by
degree through its logarithmic derivative, using that |I + Q_hat Z| is the
multi-affine polynomial sum_M |Q_hat_M| z^M. The literal route through the
trace powers tr((Q_hat Z)^k) and exp_series() is kept for cross-checking.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import infinite_divisibility
from linalg_module import CorrMatrix, det, index_set, sym_eigen
from mvgamma_errors import ConvergenceRiskError, InvalidArgumentError
from special_functions import check_alpha, gamma_cdf_shifted_seq, gamma_pdf_shifted_seq

logger = logging.getLogger(__name__)

UNIFORM_C = "uniform-c"
NORMALIZED_Q = "normalized-Q"
VARIANTS = (UNIFORM_C, NORMALIZED_Q)

DEFAULT_MARGIN = 1.05
DEFAULT_TOL = 1e-8
DEGREE_CAP = 120
MAX_DEGREE_LIMIT = 200
MAX_DIMENSION = 8
PRUNE_TOL = 1e-18
NEGATIVE_TOL = 1e-12
# adaptive growth also stops once this many coefficients are held
MAX_TERMS = 2_000_000

# multi-index keys: sum_j k_j * KEY_BASE**j fits in int64 for n <= 8, k_j <= 200
KEY_BASE = MAX_DEGREE_LIMIT + 1

MultiIndex = Tuple[int, ...]


@dataclass(frozen=True)
class CdfEstimate:
    """
    A probability (or cdf-like function value) with its error information.

    error_kind is 'bracket' when error is a rigorous bound, 'heuristic' when it
    is only indicative and 'stderr' for Monte Carlo standard errors.
    """
    value: float
    error: float
    error_kind: str
    method: str
    meta: Dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "error": self.error,
            "error_kind": self.error_kind,
            "method": self.method,
            **self.meta,
        }


class TruncatedPolynomial:
    """
    Sparse multivariate polynomial in z_1..z_n truncated at total degree K.

    Coefficients with |value| below PRUNE_TOL are dropped.
    """

    def __init__(self, n: int, max_degree: int, coeffs: Optional[Dict[MultiIndex, float]] = None):
        self.n = n
        self.max_degree = max_degree
        self.coeffs: Dict[MultiIndex, float] = {}
        for key, value in (coeffs or {}).items():
            if sum(key) <= max_degree and abs(value) >= PRUNE_TOL:
                self.coeffs[tuple(key)] = float(value)

    @classmethod
    def constant(cls, n: int, max_degree: int, value: float = 1.0) -> "TruncatedPolynomial":
        return cls(n, max_degree, {(0,) * n: value})

    def degree_part(self, d: int) -> Dict[MultiIndex, float]:
        return {k: v for k, v in self.coeffs.items() if sum(k) == d}

    def __add__(self, other: "TruncatedPolynomial") -> "TruncatedPolynomial":
        out = dict(self.coeffs)
        for key, value in other.coeffs.items():
            out[key] = out.get(key, 0.0) + value
        return TruncatedPolynomial(self.n, min(self.max_degree, other.max_degree), out)

    def scaled(self, factor: float) -> "TruncatedPolynomial":
        return TruncatedPolynomial(self.n, self.max_degree,
                                   {k: factor * v for k, v in self.coeffs.items()})

    def __mul__(self, other: "TruncatedPolynomial") -> "TruncatedPolynomial":
        return TruncatedPolynomial(self.n, min(self.max_degree, other.max_degree),
                                   _multiply(self.coeffs, other.coeffs,
                                             min(self.max_degree, other.max_degree)))

    def evaluate(self, z: Sequence[float]) -> float:
        z = np.asarray(z, dtype=float)
        return math.fsum(v * float(np.prod(z ** np.array(k))) for k, v in self.coeffs.items())

    def __len__(self) -> int:
        return len(self.coeffs)


def _multiply(a: Dict[MultiIndex, float], b: Dict[MultiIndex, float], max_degree: int) -> Dict[MultiIndex, float]:
    out: Dict[MultiIndex, float] = {}
    for ka, va in a.items():
        da = sum(ka)
        for kb, vb in b.items():
            if da + sum(kb) > max_degree:
                continue
            key = tuple(i + j for i, j in zip(ka, kb))
            out[key] = out.get(key, 0.0) + va * vb
    return out


@dataclass(frozen=True, eq=False)
class CoeffTable:
    """
    Truncated coefficient table of the expansion.

    indices is an (N x n) integer array of multi-indices, values the matching
    coefficients q(alpha; k). sum(values) + tail_mass == 1 by construction.
    """
    n: int
    alpha: float
    scale: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    max_degree: int
    tail_mass: float
    variant: str
    converged: bool
    qhat_norm: float
    infinitely_divisible: bool
    c: Optional[float] = None

    @property
    def nonnegative(self) -> bool:
        return bool(self.values.size == 0 or self.values.min() >= -NEGATIVE_TOL)

    @property
    def guaranteed_bracket(self) -> bool:
        """tail_mass bounds the truncation error only if every coefficient is >= 0"""
        return self.infinitely_divisible and self.nonnegative

    @property
    def coeffs(self) -> Dict[MultiIndex, float]:
        return {tuple(int(k) for k in idx): float(v) for idx, v in zip(self.indices, self.values)}

    def summary(self) -> dict:
        return {
            "variant": self.variant,
            "alpha": self.alpha,
            "max_degree": self.max_degree,
            "terms": int(self.values.size),
            "tail_mass": self.tail_mass,
            "converged": self.converged,
            "qhat_norm": self.qhat_norm,
            "infinitely_divisible": self.infinitely_divisible,
            "nonnegative": self.nonnegative,
            "scale": self.scale.tolist(),
            "c": self.c,
        }


def choose_c(R: CorrMatrix, margin: float = DEFAULT_MARGIN) -> float:
    """
    c = margin * max(max_j r^jj, 1 / (2 lambda_min)), so that
    Q_hat = c^-1 R^-1 - I has spectral norm < 1.
    """
    if not margin > 1.0:
        raise InvalidArgumentError(f"margin must exceed 1, got {margin}")
    inv = R.inverse()
    c = margin * max(float(np.max(np.diag(inv))), 1.0 / (2.0 * R.min_eigenvalue))
    norm = spectral_norm(inv / c - np.eye(R.n))
    if norm >= 1.0:
        raise ConvergenceRiskError(f"||Q_hat|| = {norm:.6f} >= 1 after choosing c = {c}")
    return c


def spectral_norm(a: np.ndarray) -> float:
    values, _ = sym_eigen(a)
    return float(np.max(np.abs(values))) if values.size else 0.0


def build_q(R: CorrMatrix, variant: str, margin: float = DEFAULT_MARGIN,
            c: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray, Optional[float]]:
    """
    Args:
        c: Fixed scale for the uniform-c variant (chosen by choose_c when None)

    Returns:
        (Q, per-variable scale s_j, c or None)
    """
    inv = R.inverse()
    if variant == UNIFORM_C:
        if c is None:
            c = choose_c(R, margin)
        elif not c > 0:
            raise InvalidArgumentError(f"scale c must be positive, got {c}")
        return inv / c, np.full(R.n, c), c
    if variant == NORMALIZED_Q:
        d = np.diag(inv)
        q = inv / np.sqrt(np.outer(d, d))
        np.fill_diagonal(q, 1.0)
        return q, d.copy(), None
    raise InvalidArgumentError(f"unknown variant '{variant}', expected one of {VARIANTS}")


def trace_powers(qhat, K: int) -> List[TruncatedPolynomial]:
    """
    p_k(z) = tr((Q_hat Z)^k), k = 1..K, Z = diag(z_1..z_n) of formal variables.

    Returns:
        [p_1, ..., p_K]; p_k is homogeneous of degree k
    """
    qhat = np.asarray(qhat, dtype=float)
    n = qhat.shape[0]
    if K < 1:
        raise InvalidArgumentError(f"K must be >= 1, got {K}")
    # W holds (Q_hat Z)^k as a map multi-index -> n x n matrix coefficient
    W: Dict[MultiIndex, np.ndarray] = {(0,) * n: np.eye(n)}
    out = []
    for k in range(1, K + 1):
        nxt: Dict[MultiIndex, np.ndarray] = {}
        for key, mat in W.items():
            prod = mat @ qhat
            for j in range(n):
                if not np.any(prod[:, j]):
                    continue
                new_key = key[:j] + (key[j] + 1,) + key[j + 1:]
                acc = nxt.setdefault(new_key, np.zeros((n, n)))
                acc[:, j] += prod[:, j]
        W = nxt
        out.append(TruncatedPolynomial(n, K, {key: float(np.trace(mat)) for key, mat in W.items()}))
    return out


def exp_series(P: TruncatedPolynomial, K: Optional[int] = None) -> TruncatedPolynomial:
    """
    exp(P) truncated to degree K, for P without constant term.

    Built degree by degree from E' = P' E in Euler form: d E_d = sum_j j P_j E_{d-j}.
    """
    K = P.max_degree if K is None else K
    n = P.n
    zero = (0,) * n
    if abs(P.coeffs.get(zero, 0.0)) > 0.0:
        raise InvalidArgumentError("exp_series expects a polynomial without constant term")
    P_parts = [P.degree_part(j) for j in range(K + 1)]
    E_parts: List[Dict[MultiIndex, float]] = [{zero: 1.0}]
    for d in range(1, K + 1):
        acc: Dict[MultiIndex, float] = {}
        for j in range(1, d + 1):
            if not P_parts[j]:
                continue
            for key, value in _multiply(P_parts[j], E_parts[d - j], d).items():
                acc[key] = acc.get(key, 0.0) + j * value
        E_parts.append({k: v / d for k, v in acc.items()})
    merged: Dict[MultiIndex, float] = {}
    for part in E_parts:
        merged.update(part)
    return TruncatedPolynomial(n, K, merged)


@lru_cache(maxsize=512)
def compositions(d: int, n: int) -> np.ndarray:
    """All multi-indices of length n and total degree d, as an (N x n) array"""
    if n == 1:
        out = np.array([[d]], dtype=np.int64)
    else:
        blocks = []
        for first in range(d, -1, -1):
            rest = compositions(d - first, n - 1)
            blocks.append(np.column_stack([np.full(len(rest), first, dtype=np.int64), rest]))
        out = np.vstack(blocks)
    out.setflags(write=False)
    return out


class _DeterminantSeries:
    """
    Homogeneous components E_d of |I + Q_hat Z|^-alpha, one degree at a time.

    With D(z) = sum_M |Q_hat_M| z^M the Euler operator gives
    D theta(E) = -alpha theta(D) E, i.e.
    d E_d = -sum_{M != 0} |Q_hat_M| ((d - |M|) + alpha |M|) z^M E_{d-|M|}.
    """

    def __init__(self, qhat: np.ndarray, alpha: float):
        self.n = qhat.shape[0]
        self.alpha = alpha
        self.powers = KEY_BASE ** np.arange(self.n, dtype=np.int64)
        self.minors = []
        for size in range(1, self.n + 1):
            for members in itertools.combinations(range(self.n), size):
                value = det(qhat[np.ix_(members, members)])
                if abs(value) > 1e-300:
                    shift = int(np.sum(self.powers[list(members)]))
                    self.minors.append((list(members), size, value, shift))
        zero = np.zeros((1, self.n), dtype=np.int64)
        self.parts = [(zero, np.zeros(1, dtype=np.int64), np.ones(1))]

    def advance(self) -> Tuple[np.ndarray, np.ndarray]:
        d = len(self.parts)
        idx = compositions(d, self.n)
        keys = idx @ self.powers
        order = np.argsort(keys)
        idx = idx[order]
        keys = keys[order]
        acc = np.zeros(len(keys))
        for members, size, minor, shift in self.minors:
            if size > d:
                continue
            _, src_keys, src_vals = self.parts[d - size]
            valid = np.all(idx[:, members] >= 1, axis=1)
            pos = np.searchsorted(src_keys, keys[valid] - shift)
            acc[valid] += minor * ((d - size) + self.alpha * size) * src_vals[pos]
        vals = -acc / d
        self.parts.append((idx, keys, vals))
        return idx, vals


def _qhat_and_prefactor(R: CorrMatrix, variant: str, margin: float, c: Optional[float] = None):
    Q, scale, c = build_q(R, variant, margin, c)
    qhat = Q - np.eye(R.n)
    norm = spectral_norm(qhat)
    if norm >= 1.0:
        raise ConvergenceRiskError(
            f"||Q_hat|| = {norm:.6f} >= 1 for the {variant} variant; the series is not known to converge")
    log_det_q = math.log(det(Q))
    return qhat, scale, c, norm, log_det_q


def _check_dims(R: CorrMatrix, K: int) -> None:
    if R.n > MAX_DIMENSION:
        raise InvalidArgumentError(f"series expansion supports n <= {MAX_DIMENSION}, got n = {R.n}")
    if not 0 <= K <= MAX_DEGREE_LIMIT:
        raise InvalidArgumentError(f"degree must be within 0..{MAX_DEGREE_LIMIT}, got {K}")


def _check_term_budget(n: int, K: int) -> None:
    """Same budget expand_adaptive applies before starting each new degree"""
    below = math.comb(K - 1 + n, n) if K >= 1 else 0
    if below >= MAX_TERMS:
        raise InvalidArgumentError(
            f"degree {K} in dimension {n} needs more than {MAX_TERMS} coefficients; lower K")


def _finish_table(R, alpha, variant, scale, c, norm, parts, prefactor, converged,
                  max_degree: Optional[int] = None) -> CoeffTable:
    indices = np.vstack([p[0] for p in parts])
    values = np.concatenate([p[1] for p in parts]) * prefactor
    keep = np.abs(values) >= PRUNE_TOL
    indices = indices[keep]
    values = values[keep]
    tail = 1.0 - math.fsum(values.tolist())
    infdiv = infinite_divisibility.bapat_check(R).verdict
    indices.setflags(write=False)
    values.setflags(write=False)
    table = CoeffTable(n=R.n, alpha=alpha, scale=scale, indices=indices, values=values,
                       max_degree=len(parts) - 1 if max_degree is None else max_degree,
                       tail_mass=tail, variant=variant,
                       converged=converged, qhat_norm=norm, infinitely_divisible=infdiv, c=c)
    if infdiv and not table.nonnegative:
        logger.warning("negative coefficient %.3e on an infinitely divisible matrix", values.min())
    return table


def expand_coefficients(R: CorrMatrix, alpha: float, variant: str = UNIFORM_C, K: int = 40,
                        margin: float = DEFAULT_MARGIN, method: str = "determinant",
                        c: Optional[float] = None) -> CoeffTable:
    """
    Coefficient table up to total degree K.

    Args:
        R: Correlation matrix
        alpha: Shape parameter
        variant: 'uniform-c' (scale c for all j) or 'normalized-Q' (scale r^jj)
        K: Truncation degree
        margin: Factor applied in choose_c
        method: 'determinant' (default) or 'trace' (trace powers + exp_series)

    Raises:
        ConvergenceRiskError: ||Q_hat|| >= 1
        InvalidArgumentError: the terms below degree K already exceed MAX_TERMS
    """
    check_alpha(alpha)
    _check_dims(R, K)
    _check_term_budget(R.n, K)
    qhat, scale, c, norm, log_det_q = _qhat_and_prefactor(R, variant, margin, c)
    prefactor = math.exp(alpha * log_det_q)

    if method == "determinant":
        series = _DeterminantSeries(qhat, alpha)
        parts = [(series.parts[0][0], series.parts[0][2])]
        for _ in range(K):
            parts.append(series.advance())
    elif method == "trace":
        if K == 0:
            poly = TruncatedPolynomial.constant(R.n, 0)
        else:
            P = TruncatedPolynomial(R.n, K)
            for k, p_k in enumerate(trace_powers(qhat, K), start=1):
                P = P + p_k.scaled(alpha * (-1.0) ** k / k)
            poly = exp_series(P, K)
        items = sorted(poly.coeffs.items(), key=lambda kv: (sum(kv[0]), kv[0]))
        parts = [(np.array([k for k, _ in items], dtype=np.int64).reshape(-1, R.n),
                  np.array([v for _, v in items]))]
    else:
        raise InvalidArgumentError(f"unknown expansion method '{method}'")

    total = prefactor * math.fsum(np.concatenate([p[1] for p in parts]).tolist())
    converged = abs(1.0 - total) < DEFAULT_TOL
    return _finish_table(R, alpha, variant, scale, c, norm, parts, prefactor, converged, max_degree=K)


def expand_adaptive(R: CorrMatrix, alpha: float, variant: str = UNIFORM_C, tol: float = DEFAULT_TOL,
                    cap: int = DEGREE_CAP, margin: float = DEFAULT_MARGIN,
                    c: Optional[float] = None) -> CoeffTable:
    """
    Grow the truncation degree until tail_mass < tol or the cap is reached.

    The result's converged flag is False when the cap (or MAX_TERMS) was hit first.
    """
    check_alpha(alpha)
    _check_dims(R, cap)
    qhat, scale, c, norm, log_det_q = _qhat_and_prefactor(R, variant, margin, c)
    prefactor = math.exp(alpha * log_det_q)

    series = _DeterminantSeries(qhat, alpha)
    parts = [(series.parts[0][0], series.parts[0][2])]
    mass = prefactor
    terms = 1
    converged = abs(1.0 - mass) < tol
    while not converged and len(parts) <= cap and terms < MAX_TERMS:
        idx, vals = series.advance()
        parts.append((idx, vals))
        terms += len(vals)
        mass += prefactor * math.fsum(vals.tolist())
        converged = abs(1.0 - mass) < tol
    if not converged:
        logger.warning("series did not reach tail mass %.1e by degree %d (tail %.3e)",
                       tol, len(parts) - 1, 1.0 - mass)
    return _finish_table(R, alpha, variant, scale, c, norm, parts, prefactor, converged)


def _check_point(table: CoeffTable, x) -> np.ndarray:
    xa = np.asarray(x, dtype=float).ravel()
    if xa.size != table.n:
        raise InvalidArgumentError(f"x has {xa.size} coordinates, table dimension is {table.n}")
    if np.any(xa < 0) or not np.all(np.isfinite(xa)):
        raise InvalidArgumentError("x must be finite and non-negative")
    return xa


def _term_products(table: CoeffTable, factors: np.ndarray) -> float:
    terms = np.prod(factors[np.arange(table.n), table.indices], axis=1)
    return float(np.dot(table.values, terms))


def cdf_from_table(table: CoeffTable, x) -> CdfEstimate:
    """
    G(x; R) = sum_k q(alpha; k) prod_j G_{alpha+k_j}(s_j x_j).

    The error is a rigorous bracket (tail_mass) only when all coefficients
    are non-negative; otherwise it is reported as heuristic.
    """
    xa = _check_point(table, x)
    kind = "bracket" if table.guaranteed_bracket else "heuristic"
    meta = {"degree": table.max_degree, "tail_mass": table.tail_mass, "variant": table.variant,
            "converged": table.converged}
    if np.any(xa == 0):
        return CdfEstimate(0.0, 0.0, kind, "series", meta)
    K = table.max_degree
    factors = np.vstack([gamma_cdf_shifted_seq(table.alpha, s * xj, K)
                         for s, xj in zip(table.scale, xa)])
    value = _term_products(table, factors)
    return CdfEstimate(value, abs(table.tail_mass), kind, "series", meta)


def mixed_partial_from_table(table: CoeffTable, x, M: Sequence[int]) -> float:
    """
    (prod_{i in M} d/dx_i) G(x; R) by term-by-term differentiation:
    the factors for j in M become s_j g_{alpha+k_j}(s_j x_j).
    """
    xa = _check_point(table, x)
    members = index_set(M, table.n)
    if any(xa[j] <= 0 for j in members):
        raise InvalidArgumentError("x must be strictly positive on the differentiated coordinates")
    if not members and np.any(xa == 0):
        return 0.0
    K = table.max_degree
    rows = []
    for j, (s, xj) in enumerate(zip(table.scale, xa)):
        if j in members:
            rows.append(s * gamma_pdf_shifted_seq(table.alpha, s * xj, K))
        else:
            rows.append(gamma_cdf_shifted_seq(table.alpha, s * xj, K))
    return _term_products(table, np.vstack(rows))


def gamma_cdf_series(R: CorrMatrix, alpha: float, x, variant: str = UNIFORM_C,
                     tol: float = DEFAULT_TOL, cap: int = DEGREE_CAP,
                     margin: float = DEFAULT_MARGIN) -> CdfEstimate:
    """Adaptive table + evaluation in one call"""
    table = expand_adaptive(R, alpha, variant, tol=tol, cap=cap, margin=margin)
    return cdf_from_table(table, x)


def normal_rectangle_probability(R: CorrMatrix, z, tol: float = DEFAULT_TOL,
                                 cap: int = DEGREE_CAP) -> CdfEstimate:
    """
    P(|X_1| <= z_1, ..., |X_n| <= z_n) for X ~ N(0, R), i.e. the Gamma_n(1/2, R)
    cdf at x_j = z_j^2 / 2.
    """
    za = np.abs(np.asarray(z, dtype=float))
    estimate = gamma_cdf_series(R, 0.5, 0.5 * za ** 2, tol=tol, cap=cap)
    return CdfEstimate(estimate.value, estimate.error, estimate.error_kind,
                       "series-normal", estimate.meta)
