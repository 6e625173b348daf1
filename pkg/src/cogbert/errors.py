"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes, so library code should raise
the most specific type that applies rather than bare ValueError.
"""


class CogbertError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(CogbertError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(CogbertError, ArithmeticError):
    """A computation produced or received non-finite values."""


class ValidationError(CogbertError, ValueError):
    """An input violates a documented precondition."""


class ConfigError(CogbertError, ValueError):
    """A configuration object or file is inconsistent or unparsable."""


class DataError(CogbertError, ValueError):
    """A data file is missing required content or refers to unknown ids."""


class FeatureLookupError(DataError, KeyError):
    """A sentence id has no record in the feature database."""


class CheckpointError(CogbertError, ValueError):
    """A checkpoint file is malformed or does not match the model config."""


class EmptyResultError(CogbertError, ValueError):
    """An operation legitimately ran but produced nothing usable."""
