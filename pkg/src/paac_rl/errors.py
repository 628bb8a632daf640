"""Exception types shared across the package."""


class PaacError(Exception):
    """Base class for all package errors."""


class ShapeError(PaacError, ValueError):
    """Raised when array shapes do not line up."""


class NumericError(PaacError, ArithmeticError):
    """Raised on non-finite values (diverged dynamics, exploding gradients)."""


class ContractError(PaacError, RuntimeError):
    """Raised when an operation is invoked in the wrong mode."""


class ConfigError(PaacError, ValueError):
    """Raised for invalid or inconsistent configuration."""


class EmptyBufferError(PaacError, LookupError):
    """Raised when sampling from an empty replay buffer."""


class OracleError(PaacError, RuntimeError):
    """Raised when an exact oracle fails to converge."""


class UndefinedMetricError(PaacError, ValueError):
    """Raised when a metric has no data to work with."""
