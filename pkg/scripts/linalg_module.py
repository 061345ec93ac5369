#!/usr/bin/env python3
"""
linalg module - Small dense matrix kernels and the CorrMatrix type

Dimensions handled here are tiny (n <= 16), so everything works on dense numpy
arrays. Index sets are 0-based tuples inside the library; the CLI converts to
the 1-based notation used in reports.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as linalg

from mvgamma_errors import (
    InvalidArgumentError,
    MatrixValidationError,
    NotPositiveDefiniteError,
    SingularMatrixError,
)

logger = logging.getLogger(__name__)

# Validation tolerances
SYMMETRY_TOL = 1e-8
DIAGONAL_TOL = 1e-12
PD_TOL = 1e-10
MAX_CONDITION = 1e12

# Jacobi iteration limits
JACOBI_MAX_SWEEPS = 100
JACOBI_OFF_TOL = 1e-15


def _as_square(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InvalidArgumentError(f"{name} must be square, got shape {arr.shape}")
    return arr


def index_set(members: Iterable[int], n: int) -> Tuple[int, ...]:
    """
    Normalize an index set: sorted, duplicate free, within range(n).

    Args:
        members: 0-based indices
        n: Dimension the indices refer to

    Returns:
        Strictly increasing tuple of indices
    """
    result = tuple(sorted(set(int(i) for i in members)))
    for i in result:
        if i < 0 or i >= n:
            raise InvalidArgumentError(f"index {i + 1} out of range 1..{n}")
    return result


@dataclass(frozen=True)
class Partition:
    """Split of {0..n-1} into a leading block of size n1 and a trailing block"""
    n: int
    n1: int

    def __post_init__(self):
        if not 1 <= self.n1 < self.n:
            raise InvalidArgumentError(f"partition needs 1 <= n1 < n, got n1={self.n1}, n={self.n}")

    @property
    def n2(self) -> int:
        return self.n - self.n1

    @property
    def first(self) -> Tuple[int, ...]:
        return tuple(range(self.n1))

    @property
    def second(self) -> Tuple[int, ...]:
        return tuple(range(self.n1, self.n))


def submatrix(a, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
    """Return the block of `a` with the given row and column indices (0-based)"""
    arr = np.asarray(a, dtype=float)
    rows = list(rows)
    cols = list(cols)
    for i in rows:
        if i < 0 or i >= arr.shape[0]:
            raise InvalidArgumentError(f"row index {i + 1} out of range 1..{arr.shape[0]}")
    for j in cols:
        if j < 0 or j >= arr.shape[1]:
            raise InvalidArgumentError(f"column index {j + 1} out of range 1..{arr.shape[1]}")
    return arr[np.ix_(rows, cols)].copy()


def sym_eigen(a) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    The input is symmetrized as (A + A^t)/2 first.

    Args:
        a: Symmetric (n x n) matrix

    Returns:
        (eigenvalues in descending order, matrix whose columns are the
        orthonormal eigenvectors)
    """
    arr = _as_square(a)
    n = arr.shape[0]
    work = 0.5 * (arr + arr.T)
    vecs = np.eye(n)
    scale = max(np.linalg.norm(work), np.finfo(float).tiny)

    for sweep in range(JACOBI_MAX_SWEEPS):
        off = np.sqrt(np.sum(np.tril(work, -1) ** 2))
        if off <= JACOBI_OFF_TOL * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = work[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (work[q, q] - work[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                col_p = work[:, p].copy()
                col_q = work[:, q].copy()
                work[:, p] = c * col_p - s * col_q
                work[:, q] = s * col_p + c * col_q
                row_p = work[p, :].copy()
                row_q = work[q, :].copy()
                work[p, :] = c * row_p - s * row_q
                work[q, :] = s * row_p + c * row_q
                work[p, q] = work[q, p] = 0.0

                v_p = vecs[:, p].copy()
                v_q = vecs[:, q].copy()
                vecs[:, p] = c * v_p - s * v_q
                vecs[:, q] = s * v_p + c * v_q
    else:
        logger.warning("Jacobi iteration hit %d sweeps without full convergence", JACOBI_MAX_SWEEPS)

    values = np.diag(work).copy()
    order = np.argsort(values)[::-1]
    return values[order], vecs[:, order]


def condition_estimate(a, a_inv: Optional[np.ndarray] = None) -> float:
    """1-norm condition number ||A||_1 ||A^-1||_1"""
    arr = _as_square(a)
    if a_inv is None:
        a_inv, _ = inverse_and_det(arr)
    return float(np.linalg.norm(arr, 1) * np.linalg.norm(a_inv, 1))


def inverse_and_det(a) -> Tuple[np.ndarray, float]:
    """
    Inverse and determinant from a partially pivoted LU factorization.

    Raises:
        SingularMatrixError: zero pivot, or condition estimate above MAX_CONDITION
    """
    arr = _as_square(a)
    n = arr.shape[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        lu, piv = linalg.lu_factor(arr, check_finite=True)
    pivots = np.diag(lu)
    if np.any(pivots == 0.0):
        raise SingularMatrixError("matrix is singular (zero pivot in LU)", condition=float("inf"))

    inv = linalg.lu_solve((lu, piv), np.eye(n))
    swaps = int(np.sum(piv != np.arange(n)))
    det = float(np.prod(pivots)) * (-1.0 if swaps % 2 else 1.0)

    cond = float(np.linalg.norm(arr, 1) * np.linalg.norm(inv, 1))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularMatrixError(f"matrix is ill-conditioned (condition estimate {cond:.3e})", condition=cond)
    return inv, det


def det(a) -> float:
    """Determinant via LU; no conditioning check (used for principal minors)"""
    arr = _as_square(a)
    if arr.shape[0] == 0:
        return 1.0
    return float(np.linalg.det(arr))


def inv_sqrt(a) -> np.ndarray:
    """
    A^(-1/2) of a symmetric positive-definite matrix.

    Raises:
        NotPositiveDefiniteError: some eigenvalue is not positive
    """
    values, vecs = sym_eigen(a)
    if values[-1] <= 0.0:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (smallest eigenvalue {values[-1]:.3e})",
            min_eigenvalue=float(values[-1]))
    result = (vecs / np.sqrt(values)) @ vecs.T
    return 0.5 * (result + result.T)


@dataclass(frozen=True, eq=False)
class CorrMatrix:
    """
    Validated correlation matrix: symmetric, unit diagonal, |r_ij| < 1 off the
    diagonal and positive definite (smallest eigenvalue above PD_TOL).
    """
    entries: np.ndarray
    eigenvalues: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        arr = _as_square(self.entries, "correlation matrix")
        if not np.all(np.isfinite(arr)):
            raise MatrixValidationError("correlation matrix has non-finite entries", "finite")

        asym = np.abs(arr - arr.T)
        if asym.size and asym.max() > SYMMETRY_TOL:
            i, j = np.unravel_index(np.argmax(asym), asym.shape)
            i, j = min(i, j), max(i, j)
            raise MatrixValidationError(
                f"asymmetric entries at ({i + 1},{j + 1}): {arr[i, j]} vs {arr[j, i]}",
                "symmetric", row=int(i) + 1, col=int(j) + 1)
        arr = 0.5 * (arr + arr.T)

        diag_err = np.abs(np.diag(arr) - 1.0)
        if diag_err.size and diag_err.max() > DIAGONAL_TOL:
            i = int(np.argmax(diag_err))
            raise MatrixValidationError(
                f"diagonal entry ({i + 1},{i + 1}) is {arr[i, i]}, expected 1",
                "unit-diagonal", row=i + 1, col=i + 1)
        np.fill_diagonal(arr, 1.0)

        off = np.abs(arr - np.eye(arr.shape[0]))
        if off.size and off.max() >= 1.0:
            i, j = np.unravel_index(np.argmax(off), off.shape)
            i, j = min(i, j), max(i, j)
            raise MatrixValidationError(
                f"correlation ({i + 1},{j + 1}) = {arr[i, j]} is not inside (-1, 1)",
                "off-diagonal-range", row=int(i) + 1, col=int(j) + 1)

        values, _ = sym_eigen(arr)
        if values[-1] <= PD_TOL:
            raise NotPositiveDefiniteError(
                f"correlation matrix is not positive definite (smallest eigenvalue {values[-1]:.3e})",
                min_eigenvalue=float(values[-1]))

        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)
        object.__setattr__(self, "eigenvalues", values)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues[-1])

    def inverse(self) -> np.ndarray:
        inv, _ = inverse_and_det(self.entries)
        return inv

    def determinant(self) -> float:
        return float(np.prod(self.eigenvalues))

    def block(self, rows: Sequence[int], cols: Optional[Sequence[int]] = None) -> np.ndarray:
        return submatrix(self.entries, rows, rows if cols is None else cols)

    def marginal(self, members: Sequence[int]) -> "CorrMatrix":
        """Principal sub-correlation matrix R_M"""
        return CorrMatrix(self.block(index_set(members, self.n)))

    def signed(self, signature: Sequence[float]) -> "CorrMatrix":
        """S R S for a signature vector S"""
        s = np.asarray(signature, dtype=float)
        return CorrMatrix(self.entries * np.outer(s, s))

    def to_list(self):
        return self.entries.tolist()


def equicorrelated(n: int, r: float) -> CorrMatrix:
    """Correlation matrix with all off-diagonal entries equal to r"""
    arr = np.full((n, n), float(r))
    np.fill_diagonal(arr, 1.0)
    return CorrMatrix(arr)


def random_corr_matrix(n: int, rng: np.random.Generator, extra_dof: int = 2) -> CorrMatrix:
    """
    Random correlation matrix from a normalized Gram matrix of n x (n + extra_dof)
    standard normal entries. Smaller extra_dof gives stronger correlations.
    """
    g = rng.standard_normal((n, n + extra_dof))
    gram = g @ g.T
    d = 1.0 / np.sqrt(np.diag(gram))
    return CorrMatrix(gram * np.outer(d, d))
