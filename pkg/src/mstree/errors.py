"""Exception hierarchy shared by every module.

Errors fall into two families so the command line can map them to exit codes:
configuration problems (bad inputs) and numerical failures.
"""


class MstError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigError(MstError, ValueError):
    exit_code = 2


class NumericalError(MstError, ArithmeticError):
    exit_code = 3


class InvalidBranchingFactor(ConfigError):
    pass


class NoSecondRoot(ConfigError):
    pass


class DivergentMoment(ConfigError):
    pass


class DegenerateBounds(ConfigError):
    pass


class DomainError(ConfigError):
    pass


class DuplicateKey(ConfigError):
    pass


class NotAnEigenvalue(ConfigError):
    pass


class NonConvergence(NumericalError):
    def __init__(self, message, best_residuals=None):
        super().__init__(message)
        self.best_residuals = best_residuals


class NonContracting(NumericalError):
    pass


class WorkBudgetExceeded(NumericalError):
    pass


class InsufficientTail(NumericalError):
    pass


class Unreachable(NumericalError):
    pass


class VerificationFailed(MstError):
    exit_code = 4
