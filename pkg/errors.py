# errors.py
"""Exception types raised by the library modules.

Library code raises; cli.py catches and maps them to exit codes.
"""


class CETransformerError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(CETransformerError):
    """Invalid or unreadable configuration."""


class SchemaError(CETransformerError):
    """A required CSV column is missing."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"missing column '{column}'")


class ParseError(CETransformerError):
    """A CSV cell could not be read as a number."""

    def __init__(self, row, column, value):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"non-numeric value {value!r} at row {row}, column '{column}'")


class ValidationError(CETransformerError):
    """Data violates a Dataset invariant."""


class SizingError(CETransformerError):
    """Too few units for the requested operation."""


class GenerationError(CETransformerError):
    """Synthetic generation could not produce a usable draw."""


class DimensionError(CETransformerError):
    """Shape mismatch between operands."""


class NumericError(CETransformerError):
    """Non-finite values appeared during a computation."""


class GroupError(CETransformerError):
    """A treatment group is empty or too small."""


class GroundTruthError(CETransformerError):
    """Ground-truth potential outcomes are required but absent."""


class ScalingError(CETransformerError):
    """Outcomes are outside the range a metric requires."""


class RunFileError(CETransformerError):
    """A run directory is missing a manifest, checkpoint or report."""
