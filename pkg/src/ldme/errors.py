"""Exception and warning types raised by the estimators.

Every error carries a short machine-readable ``code`` so that the CLI and
the audit reports can surface failures without parsing messages.
"""

from __future__ import annotations


class LdmeError(Exception):
    code = "ldme-error"


class ValidationError(LdmeError, ValueError):
    code = "validation"


class DimensionMismatch(ValidationError):
    code = "dimension-mismatch"


class DegenerateWeights(LdmeError):
    code = "degenerate-weights"


class NotPSD(LdmeError):
    code = "not-psd"


class EstimatorFailure(LdmeError):
    code = "estimator-failure"


class StepSizeViolation(LdmeError):
    code = "step-size-violation"


class NonTermination(LdmeError):
    code = "non-termination"


class KOverflow(LdmeError):
    code = "K-overflow"


class LoopCap(LdmeError):
    code = "loop-cap"


class SaturationViolated(LdmeError):
    code = "saturation-violated"


class UndecomposedList(LdmeError):
    code = "undecomposed-list"


class MonotonicityWarning(UserWarning):
    """Sampled check found a gain that is not below its predecessor."""

    code = "monotonicity-violation"


class WhiteningSingularWarning(UserWarning):
    """The whitening block was singular; scores fell back to a pseudo-inverse."""

    code = "whitening-singular"
