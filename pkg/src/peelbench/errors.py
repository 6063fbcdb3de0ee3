"""Workbench error types mapped to CLI exit codes."""


class ContractViolationError(ValueError):
    """Inputs violate a documented precondition or invariant. Exit code 2."""


class IntegrationDivergedError(RuntimeError):
    """Plant integration produced a non-finite state. Exit code 3."""

    def __init__(self, joint: int, message: str | None = None):
        self.joint = joint
        super().__init__(message or f"integration diverged at joint {joint}")


class SolverSingularityError(RuntimeError):
    """Normal matrix is singular; advise damping > 0."""
