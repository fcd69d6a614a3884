"""Exception types raised by the solvers.

Every error derives from ``SolverError`` so the CLI can map solver failures to a single exit
code, and from the matching builtin (``ValueError`` or ``RuntimeError``) so plain callers can
keep catching the builtin types.
"""


class SolverError(Exception):
    """Base class for every failure raised by fp_control."""


class InvalidArgumentError(SolverError, ValueError):
    """A parameter violates its documented precondition."""


class DimensionMismatchError(SolverError, ValueError):
    """An array does not match the grid it is used with."""


class NegativeInputError(SolverError, ValueError):
    """A density that must be nonnegative has negative entries."""


class ControlOutOfRangeError(SolverError, ValueError):
    """A control value lies outside the control set G."""


class TimeGridMismatchError(SolverError, ValueError):
    """A noise path or path object was sampled on a different time grid."""


class InadmissiblePerturbationError(SolverError, ValueError):
    """Neither the central nor a one-sided perturbation stays inside G."""


class CFLViolationError(SolverError, RuntimeError):
    """The explicit transport step is unstable for the requested time step."""


class SingularSystemError(SolverError, RuntimeError):
    """A tridiagonal system could not be solved."""


class ShiftOutOfDomainError(SolverError, RuntimeError):
    """A noise shift moves mass further than the configured margin."""


class ConfigError(ValueError):
    """A scenario file or override could not be loaded or validated."""
