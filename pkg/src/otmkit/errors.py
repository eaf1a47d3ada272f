"""Exception hierarchy shared by every otmkit module."""

from __future__ import annotations


class OtmError(Exception):
    """Base class for all otmkit errors."""


class InputError(OtmError, ValueError):
    """Malformed or inadmissible input."""


class DimensionMismatch(InputError):
    pass


class NegativeEntry(InputError):
    pass


class RowSumViolation(InputError):
    pass


class MarginalNotNormalized(InputError):
    pass


class NonFiniteCost(InputError):
    pass


class MissingLabels(InputError):
    pass


class LabelDimensionMismatch(InputError):
    pass


class SupportViolation(InputError):
    pass


class NotStationary(InputError):
    pass


class PreconditionViolated(InputError):
    pass


class EpsilonZero(InputError):
    """Gradients requested on the unregularized (epsilon = 0) path."""


class ExactPathUnsupported(InputError):
    pass


class InvalidPolicy(InputError):
    pass


class NonUniqueStationary(OtmError):
    """The chain has more than one stationary distribution (reducible kernel)."""


class StationaryUnavailable(OtmError):
    pass


class NotConverged(OtmError):
    """An iterative solve stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class NotConvergedWarning(RuntimeWarning):
    pass


class InvariantViolation(OtmError, AssertionError):
    """A mathematical invariant that must hold by construction was violated."""
