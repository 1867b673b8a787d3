"""Exception types shared across the package.

Every error raised on purpose derives from MtdmlError so callers (and the
CLI exit-code mapping) can distinguish our failures from genuine bugs.
"""


class MtdmlError(Exception):
    """Base class for all package errors."""


class DimensionError(MtdmlError):
    """Array shapes are inconsistent with the operation's contract."""


class ConfigError(MtdmlError):
    """A configuration value is out of range or malformed."""


class DomainError(MtdmlError):
    """An input value is outside the mathematical domain of the operation."""


class NumericError(MtdmlError):
    """A computation produced a non-finite value."""


class StateError(MtdmlError):
    """An operation was called before its prerequisites were established."""


class CapabilityError(MtdmlError):
    """The inputs lack information the operation requires (e.g. ground truth)."""


class DegenerateFeatureError(MtdmlError):
    """A covariate column carries no usable variation."""


class CsvFormatError(MtdmlError):
    """A delimited input file violates the expected schema."""
