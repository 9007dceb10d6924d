"""Exception hierarchy shared by all modules (the CLI maps these to exit codes)."""


class KvError(Exception):
    """Base class for errors raised by kvmms."""


class ValidationError(KvError, ValueError):
    """Parameters or configuration violate a documented invariant."""


class SingularMatrixError(KvError, ArithmeticError):
    pass


class GridMismatchError(ValidationError):
    pass


class InfeasibleStateError(KvError):
    """A field has det(grad y) <= 0 somewhere, or infinite energy."""


class SolverError(KvError):
    """An inner minimization or a time step could not deliver a certified result."""


class PropertyViolation(KvError):
    """A sampled inequality or runtime assertion failed; carries the dump location."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump


class FitWindowError(KvError, ValueError):
    """A decay fit window contains too few samples."""
