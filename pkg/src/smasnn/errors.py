"""Exception types shared across the package."""


class SmaSnnError(Exception):
    """Base class for all package errors."""


class ShapeError(SmaSnnError, ValueError):
    """Raised when operand shapes are incompatible."""


class ConfigError(SmaSnnError, ValueError):
    """Invalid model, experiment or layer configuration."""


class FormatError(SmaSnnError, ValueError):
    """Malformed or truncated file."""


class NumericError(SmaSnnError, ArithmeticError):
    """Non-finite values where finite ones are required."""
