"""Exceptions raised by the sdncmv package."""


class SdncmvError(Exception):
    """Root of all sdncmv errors."""


class DomainError(SdncmvError, ValueError):
    """An argument violates the documented precondition of an operation."""


class FormatError(SdncmvError, ValueError):
    """A file or artifact is malformed or inconsistent with its peers."""


class NumericError(SdncmvError, ArithmeticError):
    """A numerical routine could not produce a valid result."""


class InfeasibleError(NumericError):
    """The CLIME linear program has no solution at the requested lambda.

    Attributes:
        column: 0-based column of the precision matrix that failed.
        lambda_: the requested tuning value.
        min_feasible_lambda: the smallest lambda at which the column is
          feasible, or None if it could not be computed.
    """

    def __init__(self, column, lambda_, min_feasible_lambda=None):
        self.column = column
        self.lambda_ = lambda_
        self.min_feasible_lambda = min_feasible_lambda
        msg = f'CLIME column {column} infeasible at lambda={lambda_:.3g}'
        if min_feasible_lambda is not None:
            msg += f' (smallest feasible lambda ~ {min_feasible_lambda:.6g})'
        super().__init__(msg)


class ConvergenceError(NumericError):
    """Coordinate descent hit its iteration cap.

    Attributes:
        last_iterate: the PlrModel at the final iteration.
        kkt_violation: the largest subgradient violation of that iterate.
    """

    def __init__(self, message, last_iterate=None, kkt_violation=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.kkt_violation = kkt_violation


class ReplicateError(SdncmvError):
    """A bootstrap replicate failed; wraps the original error."""

    def __init__(self, replicate, cause):
        super().__init__(f'bootstrap replicate {replicate} failed: {cause}')
        self.replicate = replicate
        self.cause = cause
