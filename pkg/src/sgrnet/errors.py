"""Exception types raised across the package."""


class SgrError(Exception):
    """Base class for all package errors."""


class DimensionError(SgrError, ValueError):
    """Operand shapes are inconsistent."""


class ParameterError(SgrError, ValueError):
    """An argument is outside its admissible range."""


class ConfigError(SgrError, ValueError):
    """A run configuration failed validation."""


class IngestionError(SgrError, ValueError):
    """A cube or label file could not be read."""


class StructureError(SgrError, RuntimeError):
    """An internal invariant was violated (bad hierarchy, corrupted record)."""


class NonFiniteError(SgrError, FloatingPointError):
    """NaN or Inf appeared where finite values are required."""
