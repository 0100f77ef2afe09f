"""Exception types shared across the package."""


class ChsavError(Exception):
    """Base class for all package errors."""


class ConfigError(ChsavError):
    """Invalid configuration, mesh parameters, or input files."""


class AssemblyError(ChsavError):
    """Finite element assembly rejected its input (degenerate element,
    nonpositive coefficient, shape mismatch)."""


class SolverError(ChsavError):
    """Linear solver failed to meet its residual contract.

    Carries the final SolveReport in ``report`` when available.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class StepError(ChsavError):
    """A time step produced invalid state (non-finite values, violated
    admissibility, broken algebraic identity).

    ``diagnostics`` holds whatever partial per-step data was available.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics
