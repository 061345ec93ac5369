import json

import pytest

from mvgamma_errors import (
    EXIT_HYPOTHESIS,
    EXIT_INCONCLUSIVE,
    EXIT_INPUT,
    EXIT_UNCONVERGED,
    ConvergenceRiskError,
    DomainError,
    HypothesisError,
    InvalidArgumentError,
    MatrixValidationError,
    NotPositiveDefiniteError,
    NumericalDegeneracyError,
    PathInvalidError,
    SingularMatrixError,
    error_payload,
)


@pytest.mark.parametrize("exc, code", [
    (InvalidArgumentError("bad"), EXIT_INPUT),
    (DomainError("bad"), EXIT_INPUT),
    (MatrixValidationError("bad", "symmetric", 1, 2), EXIT_INPUT),
    (SingularMatrixError("bad"), EXIT_INPUT),
    (NotPositiveDefiniteError("bad", -0.1), EXIT_INPUT),
    (PathInvalidError("bad"), EXIT_HYPOTHESIS),
    (HypothesisError("bad", theorem=4, condition="all r0_ij > 0"), EXIT_HYPOTHESIS),
    (NumericalDegeneracyError("bad"), EXIT_INCONCLUSIVE),
    (ConvergenceRiskError("bad"), EXIT_UNCONVERGED),
])
def test_exit_codes(exc, code):
    assert exc.exit_code == code


def test_standard_bases():
    assert isinstance(DomainError("x"), ValueError)
    assert isinstance(NotPositiveDefiniteError("x", -1.0), ArithmeticError)
    assert isinstance(HypothesisError("x"), ValueError)


def test_validation_payload_carries_location():
    payload = error_payload(MatrixValidationError("asymmetric", "symmetric", row=1, col=2))
    assert payload == {"error": "asymmetric", "kind": "validation", "invariant": "symmetric",
                       "row": 1, "col": 2}


def test_payload_is_json_serializable_with_infinite_condition():
    payload = error_payload(NotPositiveDefiniteError("not pd", min_eigenvalue=-0.25))
    assert payload["kind"] == "not-positive-definite"
    assert payload["min_eigenvalue"] == -0.25
    assert payload["condition"] == "inf"
    json.dumps(payload, allow_nan=False)


def test_hypothesis_payload():
    payload = error_payload(HypothesisError("violated", theorem=4, condition="R >= R0 entrywise"))
    assert payload["theorem"] == 4
    assert payload["condition"] == "R >= R0 entrywise"
