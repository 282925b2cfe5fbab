"""Exception types shared across the package."""


class InvalidInput(ValueError):
    """An argument violates a documented precondition (shape, range, symmetry)."""


class ConditioningError(ArithmeticError):
    """A conditioning sub-covariance could not be factorised."""


class InsufficientData(RuntimeError):
    """A Monte-Carlo estimate accepted no samples."""


class VerificationUnavailable(RuntimeError):
    """The batched re-decoding call failed; callers fall back to a one-step commit."""
