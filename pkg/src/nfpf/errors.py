"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: numerical failures exit 1, usage and
configuration problems exit 2, data problems exit 3.
"""


class NFPFError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class NumericalError(NFPFError, ArithmeticError):
    exit_code = 1


class DegeneracyError(NumericalError):
    """All particle likelihoods vanished at some time step."""


class CovarianceError(NumericalError):
    """A covariance matrix is not symmetric positive semi-definite."""


class ConvergenceError(NumericalError):
    pass


class DegenerateMatrixError(NumericalError):
    pass


class DimensionError(NFPFError, ValueError):
    exit_code = 2


class UsageError(NFPFError):
    exit_code = 2


class ConfigError(NFPFError, ValueError):
    exit_code = 2


class DataError(NFPFError):
    exit_code = 3
