"""Exception hierarchy shared across the package."""


class DynmatchError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameter(DynmatchError, ValueError):
    """A numeric or structural argument is outside its admissible range."""


class InvalidConfig(DynmatchError, ValueError):
    """A simulation or scenario configuration violates its invariants."""


class EmptyGraph(DynmatchError, ValueError):
    """An operation that needs at least one vertex received an empty graph."""


class ParseError(DynmatchError, ValueError):
    """A pool file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class AsymmetricMatrix(DynmatchError, ValueError):
    """A pool matrix is not symmetric or has a nonzero diagonal."""


class TooLarge(DynmatchError, ValueError):
    """An exhaustive routine was asked to handle an instance above its cap."""


class NoSamples(DynmatchError, ValueError):
    """A statistic was requested over an empty sample set."""


class TruncationTooTight(DynmatchError, RuntimeError):
    """A truncated chain leaves too much probability mass at its boundary."""


class SolveFailure(DynmatchError, RuntimeError):
    """A linear system that should be well-posed failed to solve."""
