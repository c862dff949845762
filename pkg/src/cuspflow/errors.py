"""Exception types shared across the package.

Exit-code mapping lives in cli: ConfigError -> 2, SolverError /
NumericError / StepSizeError / ResourceError -> 3, verification failure -> 1.
"""


class CuspflowError(Exception):
    """Base class for package errors."""


class ParameterError(CuspflowError, ValueError):
    """Invalid physical or numerical parameter (m, beta, tolerances, ...)."""


class UsageError(CuspflowError, ValueError):
    """API misuse, e.g. mixing fields living on different grids."""


class ResourceError(CuspflowError):
    """A requested grid or run exceeds the configured resource budget."""


class SolverError(CuspflowError):
    """Iterative solver failed to converge; carries the final residual."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class StepSizeError(CuspflowError):
    """Time step violates the CFL or stability cap."""


class NumericError(CuspflowError):
    """A numerical procedure (power iteration, ascent) failed to converge."""


class ConfigError(CuspflowError):
    """Bad run configuration; carries the offending line number if known."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line
