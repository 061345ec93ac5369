#!/usr/bin/env python3
"""
special_functions module - Scalar kernels of every series term

Univariate gamma pdf/cdf, shifted-shape cdf sequences, the non-central gamma
cdf/pdf as Poisson mixtures, generalized Laguerre polynomials and erf.

The regularized incomplete gamma function and log-gamma come from scipy.special
(series / continued-fraction split internally); everything layered on top of
them is done here with numpy so that the y argument of the non-central
functions can be a whole vector of quadrature nodes.
"""

import logging
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special, stats

from mvgamma_errors import DomainError, InvalidArgumentError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Truncation of Poisson mixtures
POISSON_TAIL_TOL = 1e-14
MIN_POISSON_TERMS = 30

# Upward recurrence is abandoned once G_{alpha+k}(x) drops below this fraction of G_alpha(x)
CANCELLATION_LIMIT = 1e-4


@dataclass(frozen=True)
class Shape:
    """Gamma shape parameter alpha > 0; nu = 2 alpha is the degree of freedom"""
    alpha: float

    def __post_init__(self):
        check_alpha(self.alpha)

    @property
    def nu(self) -> float:
        return 2.0 * self.alpha

    @property
    def integer_dof(self) -> bool:
        return is_integer_dof(self.alpha)


@dataclass(frozen=True)
class NoncentralParams:
    alpha: float
    y: float

    def __post_init__(self):
        check_alpha(self.alpha)
        if self.y < 0:
            raise DomainError(f"non-centrality must be >= 0, got {self.y}")

    def cdf(self, x: float) -> float:
        return float(noncentral_gamma_cdf(self.alpha, x, self.y))

    def pdf(self, x: float) -> float:
        return float(noncentral_gamma_pdf(self.alpha, x, self.y))


def check_alpha(alpha: float) -> float:
    if not (alpha > 0 and math.isfinite(alpha)):
        raise DomainError(f"shape alpha must be positive and finite, got {alpha}")
    return float(alpha)


def is_integer_dof(alpha: float, tol: float = 1e-12) -> bool:
    """True when 2 alpha is a positive integer"""
    nu = 2.0 * alpha
    return nu >= 1 - tol and abs(nu - round(nu)) <= tol


def gamma_pdf(alpha: float, x: ArrayLike) -> ArrayLike:
    """g_alpha(x) = exp(-x) x^(alpha-1) / Gamma(alpha), x > 0"""
    check_alpha(alpha)
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0):
        raise DomainError("gamma_pdf requires x > 0")
    value = np.exp((alpha - 1.0) * np.log(xa) - xa - special.gammaln(alpha))
    return value if value.ndim else float(value)


def gamma_cdf(alpha: float, x: ArrayLike) -> ArrayLike:
    """G_alpha(x): regularized lower incomplete gamma P(alpha, x)"""
    check_alpha(alpha)
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise DomainError("gamma_cdf requires x >= 0")
    value = special.gammainc(alpha, xa)
    return value if value.ndim else float(value)


def gamma_cdf_shifted_seq(alpha: float, x: float, kmax: int) -> np.ndarray:
    """
    [G_alpha(x), G_{alpha+1}(x), ..., G_{alpha+kmax}(x)]

    Uses G_{a+1}(x) = G_a(x) - x^a e^-x / Gamma(a+1) upward with compensated
    summation, and switches to direct evaluation for the remaining shapes once
    the running value falls below CANCELLATION_LIMIT * G_alpha(x).

    Args:
        alpha: Base shape
        x: Non-negative argument
        kmax: Largest shift

    Returns:
        numpy array of length kmax + 1, nonincreasing
    """
    check_alpha(alpha)
    if kmax < 0:
        raise InvalidArgumentError(f"kmax must be >= 0, got {kmax}")
    if x < 0:
        raise DomainError("gamma_cdf_shifted_seq requires x >= 0")
    out = np.zeros(kmax + 1)
    if x == 0:
        return out

    log_x = math.log(x)
    value = float(special.gammainc(alpha, x))
    comp = 0.0
    out[0] = value
    for k in range(kmax):
        shape = alpha + k
        term = math.exp(shape * log_x - x - special.gammaln(shape + 1.0))
        # Kahan step for value -= term
        step = -term - comp
        nxt = value + step
        comp = (nxt - value) - step
        if nxt <= CANCELLATION_LIMIT * out[0]:
            shapes = alpha + np.arange(k + 1, kmax + 1)
            out[k + 1:] = special.gammainc(shapes, x)
            break
        value = nxt
        out[k + 1] = value
    return out


def poisson_truncation(y_max: float) -> int:
    """
    Number of Poisson terms k* = max(ceil(y) + 10 sqrt(y + 1), 30), grown until
    the Poisson tail beyond k* is below POISSON_TAIL_TOL.
    """
    kstar = max(int(math.ceil(y_max + 10.0 * math.sqrt(y_max + 1.0))), MIN_POISSON_TERMS)
    while y_max > 0 and stats.poisson.sf(kstar, y_max) > POISSON_TAIL_TOL:
        kstar = int(kstar * 1.5) + 1
    return kstar


def _poisson_weights(y: np.ndarray, kstar: int) -> np.ndarray:
    k = np.arange(kstar + 1)[None, :]
    yy = y[:, None]
    return np.exp(special.xlogy(k, yy) - yy - special.gammaln(k + 1.0))


def _check_noncentral(alpha: float, y: ArrayLike) -> np.ndarray:
    check_alpha(alpha)
    ya = np.asarray(y, dtype=float)
    if np.any(ya < 0) or not np.all(np.isfinite(ya)):
        raise DomainError("non-centrality y must be finite and >= 0")
    return ya


def noncentral_gamma_cdf(alpha: float, x: float, y: ArrayLike) -> ArrayLike:
    """
    G_alpha(x, y) = exp(-y) sum_k G_{alpha+k}(x) y^k / k!

    Args:
        alpha: Shape
        x: Non-negative scalar argument
        y: Non-centrality, scalar or numpy array (vectorised)

    Returns:
        Value(s) in [0, 1], same shape as y
    """
    ya = _check_noncentral(alpha, y)
    if x < 0:
        raise DomainError("noncentral_gamma_cdf requires x >= 0")
    flat = np.atleast_1d(ya).ravel()
    if x == 0:
        result = np.zeros_like(flat)
    else:
        kstar = poisson_truncation(float(flat.max(initial=0.0)))
        seq = gamma_cdf_shifted_seq(alpha, x, kstar)
        result = np.clip(_poisson_weights(flat, kstar) @ seq, 0.0, 1.0)
    result = result.reshape(ya.shape)
    return result if result.ndim else float(result)


def gamma_pdf_shifted_seq(alpha: float, x: float, kmax: int) -> np.ndarray:
    """[g_alpha(x), g_{alpha+1}(x), ..., g_{alpha+kmax}(x)] for x > 0"""
    check_alpha(alpha)
    if x <= 0:
        raise DomainError("gamma_pdf_shifted_seq requires x > 0")
    shapes = alpha + np.arange(kmax + 1)
    return np.exp((shapes - 1.0) * math.log(x) - x - special.gammaln(shapes))


def noncentral_gamma_pdf(alpha: float, x: float, y: ArrayLike) -> ArrayLike:
    """
    g_alpha(x, y) = exp(-y) sum_k g_{alpha+k}(x) y^k / k!, the x-derivative of
    noncentral_gamma_cdf. Same truncation rule as the cdf.
    """
    ya = _check_noncentral(alpha, y)
    if x <= 0:
        raise DomainError("noncentral_gamma_pdf requires x > 0")
    flat = np.atleast_1d(ya).ravel()
    kstar = poisson_truncation(float(flat.max(initial=0.0)))
    seq = gamma_pdf_shifted_seq(alpha, x, kstar)
    result = (_poisson_weights(flat, kstar) @ seq).reshape(ya.shape)
    return result if result.ndim else float(result)


def laguerre_table(kmax: int, beta: float, y: ArrayLike) -> np.ndarray:
    """
    Generalized Laguerre polynomials L_0^(beta)(y) .. L_kmax^(beta)(y) by the
    three-term recurrence. Returns an array of shape (kmax + 1,) + shape(y).
    """
    if kmax < 0:
        raise InvalidArgumentError(f"Laguerre degree must be >= 0, got {kmax}")
    ya = np.asarray(y, dtype=float)
    table = np.empty((kmax + 1,) + ya.shape)
    table[0] = 1.0
    if kmax >= 1:
        table[1] = 1.0 + beta - ya
    for k in range(1, kmax):
        table[k + 1] = ((2 * k + 1 + beta - ya) * table[k] - (k + beta) * table[k - 1]) / (k + 1)
    return table


def laguerre(k: int, beta: float, y: ArrayLike) -> ArrayLike:
    """L_k^(beta)(y)"""
    value = laguerre_table(k, beta, y)[k]
    return value if value.ndim else float(value)


def erf(x: ArrayLike) -> ArrayLike:
    value = special.erf(x)
    return value if np.ndim(value) else float(value)
