"""Exception types shared across the package."""


class TemsError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(TemsError):
    pass


class UnboundedSet(TemsError):
    pass


class EmptySet(TemsError):
    pass


class DegenerateSet(TemsError):
    """Set is not full-dimensional where the operation requires it."""


class EmptyInterior(TemsError):
    """The origin is not strictly inside the set."""


class NotConverged(TemsError):
    """Set iteration hit its iteration cap before mutual containment."""


class EmptyResult(TemsError):
    pass


class NumericalFailure(TemsError):
    """The LP backend broke down; carries context for the caller."""


class UnknownName(TemsError, KeyError):
    """Lookup of an unregistered semantic variable block."""


class NotStabilizable(TemsError):
    pass


class InfeasibleCertificate(TemsError):
    """No nonnegative multiplier matrix exists for the requested inclusion."""


class InfeasibleProblem(TemsError):
    """An offline LP has no solution (e.g. the contractive set cannot absorb
    the disturbance at the chosen lambda)."""


class EmptyTightenedSet(TemsError):
    """Constraint tightening removed the interior; the disturbance split is too aggressive."""


class NoTerminalSet(TemsError):
    pass


class InvalidHorizon(TemsError):
    pass


class WeightRuleViolation(TemsError):
    """Scenario-tree weights break the root/branch/tube ordering rules."""


class ConfigError(TemsError):
    """Bad run configuration; message carries the offending field."""
