"""Exception types shared across the package."""


class DistcondError(Exception):
    """Base class for all package errors."""


class ShapeError(DistcondError, ValueError):
    """Operands have incompatible or invalid shapes."""


class NumericError(DistcondError, ArithmeticError):
    """A computation produced NaN or Inf, or diverged."""


class TapeError(DistcondError, RuntimeError):
    """Misuse of the gradient tape (no tape, stale tape, non-scalar loss)."""


class FormatError(DistcondError, ValueError):
    """A file does not conform to its expected binary layout."""


class ConfigError(DistcondError, ValueError):
    """Invalid configuration key, value, or combination."""
