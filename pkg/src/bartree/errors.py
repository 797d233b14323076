"""Exception hierarchy shared across the package.

Two broad families matter for the CLI exit codes: input/validation
problems (exit 2) and numerical/model degeneracies discovered while
computing (exit 3).
"""


class BartreeError(Exception):
    """Base class for all package errors."""


class ValidationError(BartreeError):
    """Malformed input: files, configuration, or parameter values."""


class CapacityError(ValidationError):
    """Requested tree depth or node id exceeds the supported range."""


class LineageFormatError(ValidationError):
    """Lineage or mask file violates the format contract."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(BartreeError):
    """Numerical degeneracy: extinction, singularities, failed checks."""


class ExtinctionError(NumericalError):
    """The observed process died out before the requested statistic exists."""


class EstimationError(NumericalError):
    """Not enough observed data to run the least-squares machinery."""


class DegenerateModelError(NumericalError):
    """Model parameters produce a degenerate limit (e.g. non-PD matrix)."""
