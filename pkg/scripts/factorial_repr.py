#!/usr/bin/env python3
"""
factorial_repr module - m-factorial representations R = D + A A^t and the
mixture form of the Gamma_n(alpha, R) cdf

With B = D^-1/2 A the cdf is
    G(x; R) = E[prod_j G_alpha(x_j / d_j, b_j S b_j^t / 2)]
for S ~ W(2 alpha, I_m). For m = 1 the expectation is a one-dimensional
integral against g_alpha and is done by quadrature; for m >= 2 it is
estimated from Wishart draws.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from linalg_module import CorrMatrix, Partition, sym_eigen
from mc_batches import BATCH_SIZE, run_batches
from mvgamma_errors import InvalidArgumentError
from quadrature import DEFAULT_NODES, DEFAULT_TOL, gamma_expectation
from series_expansion import CdfEstimate
from special_functions import check_alpha, gamma_cdf, is_integer_dof, noncentral_gamma_cdf

logger = logging.getLogger(__name__)

RECONSTRUCTION_TOL = 1e-10
RANK_TOL = 1e-10
DENOMINATOR_TOL = 1e-12
ZERO_CORRELATION_TOL = 1e-14
DEFAULT_SAMPLES = 100_000


@dataclass(frozen=True, eq=False)
class FactorialRepr:
    """
    D: positive diagonal (as a vector), A: n x m real factor matrix of rank m.
    """
    D: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.D, dtype=float).ravel()
        a = np.asarray(self.A, dtype=float).reshape(d.size, -1)
        if np.any(d <= 0) or not np.all(np.isfinite(d)):
            raise InvalidArgumentError("diagonal part D must be strictly positive")
        if a.shape[1]:
            sv = np.linalg.svd(a, compute_uv=False)
            if sv[-1] <= RANK_TOL * max(sv[0], 1.0):
                raise InvalidArgumentError(f"factor matrix has rank below its {a.shape[1]} columns")
        object.__setattr__(self, "D", d)
        object.__setattr__(self, "A", a)

    @classmethod
    def compressed(cls, D, A) -> "FactorialRepr":
        """Build from a possibly rank-deficient A, keeping A A^t unchanged"""
        a = np.asarray(A, dtype=float)
        if a.ndim == 2 and a.shape[1]:
            u, sv, _ = np.linalg.svd(a, full_matrices=False)
            keep = sv > RANK_TOL * max(sv[0], 1.0)
            a = u[:, keep] * sv[keep]
        return cls(D, a)

    @property
    def n(self) -> int:
        return self.D.size

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def B(self) -> np.ndarray:
        return self.A / np.sqrt(self.D)[:, None]

    def reconstruct(self) -> np.ndarray:
        return np.diag(self.D) + self.A @ self.A.T

    def reconstruction_error(self, R: CorrMatrix) -> float:
        return float(np.max(np.abs(self.reconstruct() - R.entries)))

    def to_dict(self) -> dict:
        return {"m": self.m, "D": self.D.tolist(), "A": self.A.tolist()}


@dataclass(frozen=True, eq=False)
class WishartSample:
    S: np.ndarray
    dof: float = field(default=0.0)

    @property
    def m(self) -> int:
        return self.S.shape[0]


def one_factorial_repr(a) -> FactorialRepr:
    a = np.asarray(a, dtype=float)
    if np.any(np.abs(a) >= 1):
        raise InvalidArgumentError("one-factorial loadings must satisfy |a_j| < 1")
    return FactorialRepr.compressed(1.0 - a ** 2, a[:, None])


def _component_squares(r: np.ndarray, members: np.ndarray) -> Optional[np.ndarray]:
    """a_i^2 for one connected block of non-zero correlations, or None"""
    if members.size == 1:
        return np.zeros(1)
    if members.size == 2:
        return np.full(2, abs(r[members[0], members[1]]))
    squares = np.empty(members.size)
    for pos, i in enumerate(members):
        others = [j for j in members if j != i]
        estimates = [r[i, j] * r[i, k] / r[j, k]
                     for j, k in itertools.combinations(others, 2)
                     if abs(r[j, k]) > DENOMINATOR_TOL]
        if not estimates:
            return None
        squares[pos] = float(np.mean(estimates))
    return squares


def detect_one_factorial(R: CorrMatrix) -> Optional[np.ndarray]:
    """
    Vector a with r_ij = a_i a_j (i != j) and |a_i| < 1, or None.

    Each connected block of the non-zero correlation graph is solved on its
    own: a lone pair gives a_i^2 = |r_ij|, larger blocks average the triple
    ratios r_ij r_ik / r_jk with non-zero denominators. The whole matrix is
    verified afterwards. The first non-zero entry of each block is positive.
    """
    r = R.entries
    n = R.n
    adjacency = np.abs(r) > ZERO_CORRELATION_TOL
    np.fill_diagonal(adjacency, False)
    count, labels = csgraph.connected_components(sparse.csr_matrix(adjacency), directed=False)

    a = np.zeros(n)
    for label in range(count):
        members = np.flatnonzero(labels == label)
        squares = _component_squares(r, members)
        if squares is None or np.any(squares < -RECONSTRUCTION_TOL) or np.any(squares >= 1):
            return None
        values = np.sqrt(np.clip(squares, 0.0, None))
        ref = members[0]
        for pos, i in enumerate(members[1:], start=1):
            if r[ref, i] < 0:
                values[pos] = -values[pos]
        a[members] = values

    off = ~np.eye(n, dtype=bool)
    if n > 1 and np.max(np.abs(np.outer(a, a) - r)[off]) > RECONSTRUCTION_TOL:
        return None
    return a


def generic_decomposition(R: CorrMatrix, shrink: float = 0.0) -> FactorialRepr:
    """
    At most (n-1)-factorial representation with D = lambda_min (1 - shrink) I.

    With shrink = 0 the eigen-directions of R - D with (numerically) zero
    eigenvalue are dropped; a positive shrink keeps them and m becomes n.
    """
    if not 0.0 <= shrink < 1.0:
        raise InvalidArgumentError(f"shrink must be in [0, 1), got {shrink}")
    lam = R.min_eigenvalue * (1.0 - shrink)
    values, vecs = sym_eigen(R.entries - lam * np.eye(R.n))
    keep = values > RANK_TOL * max(values[0], 1.0)
    A = vecs[:, keep] * np.sqrt(values[keep])
    return FactorialRepr.compressed(np.full(R.n, lam), A)


def tau_factorial_repr(rep: FactorialRepr, partition: Partition, rep22: FactorialRepr,
                       tau: float) -> FactorialRepr:
    """
    Representation of R_tau = [[R11, tau R12], [tau R21, R22]] from
    R = D + A A^t and a separate R22 = D_B + B B^t:

        D_tau = D1 (+) (tau^2 D2 + (1 - tau^2) D_B)
        A_tau = [[A1, 0], [tau A2, sqrt(1 - tau^2) B]]
    """
    if not 0.0 <= tau <= 1.0:
        raise InvalidArgumentError(f"tau must be in [0, 1], got {tau}")
    if rep.n != partition.n or rep22.n != partition.n2:
        raise InvalidArgumentError("representations do not match the partition")
    n1 = partition.n1
    D = np.concatenate([rep.D[:n1], tau ** 2 * rep.D[n1:] + (1.0 - tau ** 2) * rep22.D])
    top = np.hstack([rep.A[:n1], np.zeros((n1, rep22.m))])
    bottom = np.hstack([tau * rep.A[n1:], math.sqrt(1.0 - tau ** 2) * rep22.A])
    return FactorialRepr.compressed(D, np.vstack([top, bottom]))


def _check_point(x, n: int) -> np.ndarray:
    xa = np.asarray(x, dtype=float).ravel()
    if xa.size != n:
        raise InvalidArgumentError(f"x has {xa.size} coordinates, expected {n}")
    if np.any(xa < 0) or not np.all(np.isfinite(xa)):
        raise InvalidArgumentError("x must be finite and non-negative")
    return xa


def cdf_one_factorial(a, alpha: float, x, quad_nodes: int = DEFAULT_NODES,
                      tol: float = DEFAULT_TOL) -> CdfEstimate:
    """
    G(x; R) for r_ij = a_i a_j:

        int_0^inf prod_j G_alpha(x_j / (1 - a_j^2), a_j^2 y / (1 - a_j^2)) g_alpha(y) dy

    Valid for every alpha > 0.
    """
    check_alpha(alpha)
    a = np.asarray(a, dtype=float).ravel()
    if np.any(np.abs(a) >= 1):
        raise InvalidArgumentError("one-factorial loadings must satisfy |a_j| < 1")
    xa = _check_point(x, a.size)
    if np.any(xa == 0):
        return CdfEstimate(0.0, 0.0, "bracket", "one-factorial")
    d = 1.0 - a ** 2
    if np.all(a == 0):
        return CdfEstimate(float(np.prod(gamma_cdf(alpha, xa))), 0.0, "bracket", "one-factorial")

    def integrand(y: np.ndarray) -> np.ndarray:
        out = np.ones_like(y)
        for aj, dj, xj in zip(a, d, xa):
            out *= noncentral_gamma_cdf(alpha, xj / dj, (aj * aj / dj) * y)
        return out

    result = gamma_expectation(integrand, alpha, nodes=quad_nodes, tol=tol)
    if not result.converged:
        logger.warning("one-factorial quadrature did not converge (estimated error %.2e)", result.error)
    return CdfEstimate(result.value, result.error, "heuristic", "one-factorial",
                       {"quadrature": result.to_dict()})


def check_wishart_dof(dof: float, m: int) -> None:
    if not (is_integer_dof(dof / 2.0) or dof > m - 1):
        raise InvalidArgumentError(
            f"Wishart degree of freedom {dof} must be a positive integer or exceed m - 1 = {m - 1}")


def wishart_draws(dof: float, m: int, rng: np.random.Generator, count: int) -> np.ndarray:
    """
    count independent W(dof, I_m) (or pseudo-Wishart) matrices, shape (count, m, m).

    Integer dof: sums of dof outer products of standard normal m-vectors.
    Otherwise the Bartlett construction.
    """
    check_wishart_dof(dof, m)
    if is_integer_dof(dof / 2.0):
        u = rng.standard_normal((count, int(round(dof)), m))
        return np.einsum("svi,svj->sij", u, u)
    L = np.zeros((count, m, m))
    idx = np.arange(m)
    L[:, idx, idx] = np.sqrt(rng.chisquare(dof - idx, size=(count, m)))
    rows, cols = np.tril_indices(m, -1)
    L[:, rows, cols] = rng.standard_normal((count, rows.size))
    return L @ np.transpose(L, (0, 2, 1))


def sample_wishart(dof: float, m: int, rng: np.random.Generator) -> WishartSample:
    return WishartSample(wishart_draws(dof, m, rng, 1)[0], dof)


def cdf_mixture_mc(rep: FactorialRepr, alpha: float, x, n_samples: int = DEFAULT_SAMPLES,
                   seed: int = 0, threads: Optional[int] = None,
                   batch_size: int = BATCH_SIZE) -> CdfEstimate:
    """
    Monte Carlo estimate of E[prod_j G_alpha(x_j / d_j, b_j S b_j^t / 2)].

    Returns:
        CdfEstimate with error_kind 'stderr'
    """
    check_alpha(alpha)
    dof = 2.0 * alpha
    check_wishart_dof(dof, rep.m)
    xa = _check_point(x, rep.n)
    meta = {"samples": n_samples, "seed": seed, "m": rep.m}
    if np.any(xa == 0):
        return CdfEstimate(0.0, 0.0, "stderr", "mixture-mc", meta)
    scaled = xa / rep.D
    if rep.m == 0:
        return CdfEstimate(float(np.prod(gamma_cdf(alpha, scaled))), 0.0, "stderr", "mixture-mc", meta)
    B = rep.B

    def batch(rng: np.random.Generator, count: int) -> np.ndarray:
        S = wishart_draws(dof, rep.m, rng, count)
        # y_js = b_j S_s b_j^t / 2
        y = 0.5 * np.einsum("ji,sik,jk->js", B, S, B)
        out = np.ones(count)
        for j in range(rep.n):
            out *= noncentral_gamma_cdf(alpha, scaled[j], np.clip(y[j], 0.0, None))
        return out

    mean, stderr = run_batches(batch, n_samples, seed, batch_size, threads).scalar()
    return CdfEstimate(mean, stderr, "stderr", "mixture-mc", meta)
