"""Exception and warning types raised by the package."""


class DiodeSquidError(Exception):
    """Base class for all package errors."""


class ValidationError(DiodeSquidError, ValueError):
    """Invalid input parameters or configuration."""


class NonFinite(ValidationError):
    pass


class OutOfRange(DiodeSquidError, ValueError):
    pass


class GridMismatch(ValidationError):
    pass


class NoSolutionOnBranch(DiodeSquidError):
    """The requested phase lies beyond the fold of the tracked branch."""


class SeedFailure(DiodeSquidError):
    pass


class EmptyValidRange(DiodeSquidError):
    pass


class SingularInductance(DiodeSquidError):
    pass


class BranchTerminated(DiodeSquidError):
    pass


class NonPhysical(DiodeSquidError):
    pass


class NoStableBranch(DiodeSquidError):
    pass


class DegenerateSlope(DiodeSquidError):
    pass


class ConstraintFailure(DiodeSquidError):
    pass


class CapExceeded(DiodeSquidError):
    pass


class ComplexRoot(DiodeSquidError):
    pass


class NegativeResult(DiodeSquidError):
    pass


class ZeroBackground(DiodeSquidError):
    pass


class NoResonanceFound(DiodeSquidError):
    pass


class NonConvergence(DiodeSquidError):
    pass


class FitDivergence(NonConvergence):
    pass


class AmbiguousJumps(DiodeSquidError):
    pass


class InsufficientArcs(DiodeSquidError):
    pass


class TableRangeExceeded(DiodeSquidError):
    pass


class ParameterAtBound(UserWarning):
    """A fitted parameter finished on (or within rounding of) its bound."""


class ConfigError(ValidationError):
    """Invalid run configuration; the message names the offending line."""


class ParseError(ValidationError):
    """Malformed data file; the message names the line and column."""
