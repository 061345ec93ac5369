#!/usr/bin/env python3
"""
Exception hierarchy shared by all mvgamma modules.

Every class carries the CLI exit code it maps to.
"""

import math
from typing import Optional

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_HYPOTHESIS = 3
EXIT_INCONCLUSIVE = 4
EXIT_UNCONVERGED = 5


class MvGammaError(Exception):
    """Base class of all errors raised by the mvgamma modules"""
    exit_code = EXIT_INPUT
    kind = "error"


class InvalidArgumentError(MvGammaError, ValueError):
    kind = "invalid-argument"


class DomainError(InvalidArgumentError):
    kind = "domain"


class MatrixValidationError(InvalidArgumentError):
    """
    A matrix failed one of the CorrMatrix invariants.

    Args:
        message: Human readable description
        invariant: Name of the violated invariant ('symmetric', 'unit-diagonal', ...)
        row, col: 1-based location of the offending entry, when there is one
    """
    kind = "validation"

    def __init__(self, message: str, invariant: str,
                 row: Optional[int] = None, col: Optional[int] = None):
        super().__init__(message)
        self.invariant = invariant
        self.row = row
        self.col = col


class SingularMatrixError(MvGammaError, ArithmeticError):
    kind = "singular-matrix"

    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(message)
        self.condition = condition


class NotPositiveDefiniteError(SingularMatrixError):
    kind = "not-positive-definite"

    def __init__(self, message: str, min_eigenvalue: float):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class ConvergenceRiskError(MvGammaError, ArithmeticError):
    kind = "convergence-risk"
    exit_code = EXIT_UNCONVERGED


class NumericalDegeneracyError(MvGammaError, ArithmeticError):
    kind = "numerical-degeneracy"
    exit_code = EXIT_INCONCLUSIVE


class PathInvalidError(MvGammaError, ValueError):
    kind = "path-invalid"
    exit_code = EXIT_HYPOTHESIS


class HypothesisError(MvGammaError, ValueError):
    """A theorem precondition does not hold for the given inputs"""
    kind = "hypothesis"
    exit_code = EXIT_HYPOTHESIS

    def __init__(self, message: str, theorem: Optional[int] = None, condition: str = ""):
        super().__init__(message)
        self.theorem = theorem
        self.condition = condition


def error_payload(exc: MvGammaError) -> dict:
    """JSON-ready description of an error, as emitted by the CLI"""
    payload = {"error": str(exc), "kind": exc.kind}
    for attr in ("invariant", "row", "col", "condition", "min_eigenvalue", "theorem"):
        value = getattr(exc, attr, None)
        if value is None or value == "":
            continue
        if isinstance(value, float) and not math.isfinite(value):
            value = str(value)
        payload[attr] = value
    return payload
