"""Exception types shared by the stochqm modules."""


class StochQMError(Exception):
    """Base class for all package errors."""


class InvalidInputError(StochQMError, ValueError):
    """An argument violates an operation's precondition."""


class ConvergenceError(StochQMError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DiagnosticError(StochQMError, RuntimeError):
    """A solver or estimator detected that its result cannot be trusted."""


class SimulationError(StochQMError, RuntimeError):
    """A stochastic simulation produced non-finite values."""
