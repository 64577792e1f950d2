"""Exception hierarchy shared by the model, simulator, fitter and pipeline."""


class LaborstatError(Exception):
    """Base class for every error raised by this package."""


class DomainError(LaborstatError, ValueError):
    """An argument lies outside the domain of the function (e.g. c <= 0)."""


class NumericError(LaborstatError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class SolverError(LaborstatError):
    """A root finder or optimizer could not produce an answer."""


class BracketError(SolverError):
    """The supplied interval does not bracket a root."""


class NoInteriorPeakError(SolverError):
    """The occupancy curve is monotone for these parameters."""


class FeasibilityError(LaborstatError):
    """The requested occupancy cannot be realised on the grid."""


class InvariantError(LaborstatError):
    """A conserved quantity or hard capacity was violated during a run."""


class InsufficientDataError(LaborstatError):
    """Too few usable points for the requested estimate."""


class IllPosedError(LaborstatError):
    """The fit input cannot constrain all four parameters."""


class EmptyInputError(LaborstatError):
    """No records survived filtering or fell inside the binning range."""


class PipelineError(LaborstatError):
    """Malformed input file or record."""
