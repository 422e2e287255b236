"""Exception types shared by the solver stack."""


class SolverError(Exception):
    """Base class for all numerical failures raised by this package."""


class SingularMatrixError(SolverError):
    """A pivot of a dense factorization fell below the singularity tolerance."""


class RankDeficientError(SolverError):
    """An underdetermined system lost full row rank."""


class NonFiniteError(SolverError):
    """A function evaluation or intermediate state produced NaN or Inf."""


class NewtonDivergedError(SolverError):
    """A stage Newton iteration exhausted its budget without converging.

    Carries the window and step index of the failing implicit stage when
    the caller provided them.
    """

    def __init__(self, message, window=None, step=None):
        super().__init__(message)
        self.window = window
        self.step = step


class NoOscillationDetectedError(SolverError):
    """Period detection found fewer than three mean-level crossings."""


class ConfigError(Exception):
    """Invalid run configuration (bad file, bad value, broken invariant)."""
