"""Solver failure types."""


class SolverError(RuntimeError):
    """A solver produced non-finite iterates or could not proceed."""


class UnobservableSystemError(SolverError):
    """The weighted normal matrix is singular: the state is not observable
    from the supplied measurements."""
