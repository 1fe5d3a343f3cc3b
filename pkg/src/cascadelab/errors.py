"""Exception types raised across the package."""


class CascadeError(Exception):
    """Base class for cascadelab errors."""


class DivergentMomentError(CascadeError, ValueError):
    """A requested moment is infinite (or rejected as such)."""


class RootFindingError(CascadeError, RuntimeError):
    """Bracket-and-bisect failed; carries the bracket that was searched."""

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class MemoryBoundError(CascadeError, ValueError):
    """A field would exceed the configured cell budget."""


class DimensionOverflowError(CascadeError, ValueError):
    """Tensor product dimension above the configured maximum."""


class DegenerateRegressionError(CascadeError, ValueError):
    """Too few levels, or non-positive partition sums, for a log-log fit."""


class ZeroCellError(CascadeError, ValueError):
    """Negative exponent applied to a cell of zero mass."""
