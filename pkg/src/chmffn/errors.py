"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise the
most specific class that applies rather than a bare ValueError.
"""


class ConfigError(Exception):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class DataError(Exception):
    """Malformed or inconsistent input data (CLI exit code 3)."""


class NumericError(Exception):
    """Non-finite values or numerically undefined results (CLI exit code 4)."""


class UndefinedMetricError(NumericError):
    """A metric denominator is zero; the value is undefined, never silently 0."""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""
