"""Exception types shared across the package."""


class NodalPriceError(Exception):
    """Base class for all package errors."""


class ScenarioError(NodalPriceError, ValueError):
    """Malformed or semantically invalid scenario document.

    Parameters
    ----------
    message : str
        Human readable description.
    entity : str, optional
        Offending entity id or field path (``units[2].pmax``).
    line : int, optional
        1-based line number for syntax errors.
    """

    def __init__(self, message, entity=None, line=None):
        self.entity = entity
        self.line = line
        prefix = ""
        if line is not None:
            prefix = f"line {line}: "
        elif entity is not None:
            prefix = f"{entity}: "
        super().__init__(prefix + message)


class AssemblyError(NodalPriceError):
    """Scenario cannot be turned into an optimization problem as given."""


class InfeasibleError(NodalPriceError):
    """No point satisfies the constraints within tolerance."""

    def __init__(self, message, violation=None):
        self.violation = violation
        super().__init__(message)


class MaxIterationsError(NodalPriceError):
    pass


class MarginalOfferError(NodalPriceError):
    """A dispatch landed on an interior bid-curve breakpoint."""

    def __init__(self, message, tags=()):
        self.tags = tuple(tags)
        super().__init__(message)


class NonsmoothPointError(NodalPriceError):
    """The binding constraint set changed between finite-difference probes."""

    def __init__(self, message, added=(), removed=()):
        self.added = tuple(added)
        self.removed = tuple(removed)
        super().__init__(message)


class SingularBorderedHessianError(NodalPriceError):
    def __init__(self, message, smallest_singular_value):
        self.smallest_singular_value = smallest_singular_value
        super().__init__(f"{message} (smallest singular value {smallest_singular_value:.3e})")


class InvalidPartitionError(NodalPriceError, ValueError):
    """Firm constraints couple the fixed and free halves of an hour partition."""
