"""
Exception hierarchy for the LLaCA package.
"""


class LlacaError(Exception):
    """Base class for all errors raised by the package."""


class IncompatibleLayoutError(LlacaError, ValueError):
    """Two parameter vectors do not share the same segment layout."""


class DegenerateInputError(LlacaError, ValueError):
    """A closed-form expression hit a zero (or near-zero) denominator."""


class ShapeError(LlacaError, ValueError):
    """Input batch or network dimensions do not fit together."""


class ConfigError(LlacaError, ValueError):
    """Invalid or unknown configuration."""


class MatrixFormatError(LlacaError, ValueError):
    """
    Malformed accuracy-matrix file.

    Args:
        message: Description of the problem
        row: 1-based data row that triggered the error (None if file-level)
    """

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class NumericalError(LlacaError, ArithmeticError):
    """Non-finite loss during training."""

    def __init__(self, message, task=None, iteration=None):
        self.task = task
        self.iteration = iteration
        super().__init__(message)
