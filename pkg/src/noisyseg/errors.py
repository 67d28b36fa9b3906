"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input, file, or constructed object violates a contract."""


class NumericalError(RuntimeError):
    """Raised when a computation fails numerically (singular matrix, divergence)."""
