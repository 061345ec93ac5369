#!/usr/bin/env python3
"""
infinite_divisibility module - Is |I + RT|^-1 infinitely divisible?

Two equivalent criteria, both evaluated on the off-diagonal entries of R^-1:

* cycle criterion: (-1)^k q_{i1 i2} q_{i2 i3} ... q_{ik i1} >= 0 for every
  cycle of k >= 3 distinct indices
* signature criterion: some diagonal S = diag(+-1) makes (SRS)^-1 an M-matrix
"""

import logging
from dataclasses import dataclass, field
from typing import FrozenSet, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from linalg_module import CorrMatrix, inverse_and_det
from mvgamma_errors import InvalidArgumentError

logger = logging.getLogger(__name__)

SIGN_TOL = 1e-12
GRIFFITHS = "griffiths"
BAPAT = "bapat"
CRITERIA = (GRIFFITHS, BAPAT)
# cycle enumeration grows super-exponentially beyond this
MAX_CYCLE_DIMENSION = 8


@dataclass(frozen=True)
class SignatureMatrix:
    """Diagonal of a signature matrix, entries +1 / -1"""
    s: Tuple[int, ...]

    def __post_init__(self):
        if any(v not in (-1, 1) for v in self.s):
            raise InvalidArgumentError(f"signature entries must be +1 or -1, got {self.s}")

    @classmethod
    def identity(cls, n: int) -> "SignatureMatrix":
        return cls((1,) * n)

    def as_array(self) -> np.ndarray:
        return np.array(self.s, dtype=float)

    def apply(self, a) -> np.ndarray:
        """S A S"""
        v = self.as_array()
        return np.asarray(a, dtype=float) * np.outer(v, v)


@dataclass(frozen=True)
class InfDivReport:
    verdict: bool
    griffiths_witness: Optional[Tuple[int, ...]] = None
    bapat_signature: Optional[SignatureMatrix] = None
    checked_criteria: FrozenSet[str] = field(default_factory=frozenset)
    agree: Optional[bool] = None

    def to_dict(self) -> dict:
        """1-based witness cycle, as shown in reports"""
        return {
            "verdict": self.verdict,
            "griffiths_witness": None if self.griffiths_witness is None
            else [i + 1 for i in self.griffiths_witness],
            "bapat_signature": None if self.bapat_signature is None else list(self.bapat_signature.s),
            "checked_criteria": sorted(self.checked_criteria),
            "criteria_agree": self.agree,
        }


@dataclass(frozen=True)
class CriterionResult:
    verdict: bool
    witness: Optional[object] = None


def _inverse(R) -> np.ndarray:
    if isinstance(R, CorrMatrix):
        return R.inverse()
    inv, _ = inverse_and_det(R)
    return inv


def is_m_matrix(a, tol: float = SIGN_TOL) -> bool:
    """Non-positive off-diagonal entries and an entrywise non-negative inverse"""
    arr = np.asarray(a, dtype=float)
    off = arr - np.diag(np.diag(arr))
    if np.any(off > tol):
        return False
    inv, _ = inverse_and_det(arr)
    return bool(np.all(inv >= -tol))


def simple_cycles(n: int) -> Iterator[Tuple[int, ...]]:
    """
    Every cycle over k >= 3 distinct indices of range(n), once per class of
    rotations and reflections: the cycle starts at its smallest index and its
    second index is smaller than its last.
    """
    def extend(path: List[int], used: List[bool]) -> Iterator[Tuple[int, ...]]:
        if len(path) >= 3 and path[1] < path[-1]:
            yield tuple(path)
        for nxt in range(path[0] + 1, n):
            if not used[nxt]:
                used[nxt] = True
                path.append(nxt)
                yield from extend(path, used)
                path.pop()
                used[nxt] = False

    for start in range(n):
        used = [False] * n
        used[start] = True
        yield from extend([start], used)


def cycle_sign_value(q: np.ndarray, cycle: Sequence[int]) -> float:
    """(-1)^k q_{i1 i2} ... q_{ik i1}; entries inside SIGN_TOL count as zero"""
    k = len(cycle)
    product = 1.0
    for a, b in zip(cycle, list(cycle[1:]) + [cycle[0]]):
        entry = q[a, b]
        if abs(entry) <= SIGN_TOL:
            return 0.0
        product *= entry
    return (-1.0) ** k * product


def griffiths_check(R) -> CriterionResult:
    """
    Cycle sign criterion on R^-1.

    Returns:
        CriterionResult; witness is the first failing cycle (0-based) in
        enumeration order
    """
    q = _inverse(R)
    n = q.shape[0]
    if n > MAX_CYCLE_DIMENSION:
        logger.warning("cycle enumeration for n = %d is expensive; prefer the signature criterion", n)
    for cycle in simple_cycles(n):
        if cycle_sign_value(q, cycle) < 0:
            logger.debug("cycle %s fails the sign condition", cycle)
            return CriterionResult(False, cycle)
    return CriterionResult(True, None)


def _gray_codes(bits: int) -> Iterator[int]:
    for i in range(1 << bits):
        yield i ^ (i >> 1)


def _start_pattern(q: np.ndarray) -> int:
    # s_1 = +1 and s_j chosen so that s_1 s_j q_1j <= 0
    pattern = 0
    for j in range(1, q.shape[0]):
        if q[0, j] > SIGN_TOL:
            pattern |= 1 << (j - 1)
    return pattern


def _signature_from_bits(bits: int, n: int) -> SignatureMatrix:
    return SignatureMatrix((1,) + tuple(-1 if bits >> (j - 1) & 1 else 1 for j in range(1, n)))


def bapat_check(R) -> CriterionResult:
    """
    Search for S with (SRS)^-1 = S R^-1 S an M-matrix.

    Candidates (s_1 = +1) are visited in Gray-code order starting from the
    sign pattern suggested by the first row of R^-1.

    Returns:
        CriterionResult; witness is the SignatureMatrix found
    """
    r = R.entries if isinstance(R, CorrMatrix) else np.asarray(R, dtype=float)
    q = _inverse(R)
    n = q.shape[0]
    if n == 1:
        return CriterionResult(True, SignatureMatrix.identity(1))
    start = _start_pattern(q)
    for code in _gray_codes(n - 1):
        signature = _signature_from_bits(start ^ code, n)
        sq = signature.apply(q)
        off = sq - np.diag(np.diag(sq))
        if np.any(off > SIGN_TOL):
            continue
        # the inverse of S R^-1 S is S R S
        if np.all(signature.apply(r) >= -SIGN_TOL):
            return CriterionResult(True, signature)
    return CriterionResult(False, None)


def check_infdiv(R: CorrMatrix, criteria: Sequence[str] = CRITERIA) -> InfDivReport:
    """
    Run the requested criteria and combine them.

    When both run and disagree the cycle criterion's verdict is reported and
    agree is set to False.
    """
    criteria = tuple(dict.fromkeys(criteria))
    unknown = [c for c in criteria if c not in CRITERIA]
    if unknown or not criteria:
        raise InvalidArgumentError(f"unknown criteria {unknown or criteria}, expected a subset of {CRITERIA}")

    griffiths = griffiths_check(R) if GRIFFITHS in criteria else None
    bapat = bapat_check(R) if BAPAT in criteria else None

    agree = None
    if griffiths is not None and bapat is not None:
        agree = griffiths.verdict == bapat.verdict
        if not agree:
            logger.error("criteria disagree: cycles=%s signature=%s", griffiths.verdict, bapat.verdict)
    verdict = griffiths.verdict if griffiths is not None else bapat.verdict
    return InfDivReport(
        verdict=verdict,
        griffiths_witness=griffiths.witness if griffiths is not None else None,
        bapat_signature=bapat.witness if bapat is not None else None,
        checked_criteria=frozenset(criteria),
        agree=agree,
    )
