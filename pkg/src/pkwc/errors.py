"""Exception hierarchy shared by the solver, the harness and the CLI."""

from __future__ import annotations


class PKWCError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(PKWCError, ValueError):
    """Invalid grid, parameter or config-file input.

    ``violations`` lists every failed constraint, not only the first one.
    """

    def __init__(self, message: str, violations: list[str] | None = None):
        self.violations = list(violations) if violations else [message]
        super().__init__(message)


class GridMismatchError(PKWCError, ValueError):
    """Two fields that must live on the same grid do not."""


class ModelError(PKWCError, ValueError):
    """Material functions violate a structural assumption."""


class PreconditionError(PKWCError, ValueError):
    """A step-size guard or an L-infinity bound on the data is violated."""


class NumericalError(PKWCError, ArithmeticError):
    """A non-finite value showed up during a solve."""


class SolverFailure(PKWCError, RuntimeError):
    """An iterative solver did not reach its tolerance.

    The partial :class:`~pkwc.elliptic.SolveReport` is attached as ``report``.
    """

    def __init__(self, message: str, report=None):
        self.report = report
        super().__init__(message)


class OracleFailure(PKWCError, RuntimeError):
    """The brute-force test oracle could not produce an answer."""


class RunAborted(PKWCError, RuntimeError):
    """A time march stopped early; carries the partial trajectory and ledger."""

    def __init__(self, message: str, trajectory=None, ledger=None, cause=None):
        self.trajectory = trajectory if trajectory is not None else []
        self.ledger = ledger
        self.cause = cause
        super().__init__(message)
