"""
Error types for the lab.
Every error carries a short code naming the failed precondition and the process exit code the CLI uses.
"""


class LabError(Exception):
    """Base class for all lab errors."""

    exit_code = 3

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(message or code)


class ValidationError(LabError):
    """Invalid input: bad parameters, unknown keys, violated preconditions."""

    exit_code = 2


class NumericalFailure(LabError):
    """A computation did not produce a usable result."""

    exit_code = 3


class SolverDiverged(NumericalFailure):
    """Nonlinear iteration hit its iteration limit. Carries the last report."""

    def __init__(self, message: str, report=None):
        super().__init__("diverged", message)
        self.report = report


class AcceptanceFailure(LabError):
    """A reproduction or certificate check did not pass."""

    exit_code = 4
