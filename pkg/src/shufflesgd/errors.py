"""Exception types raised across the package."""


class ShuffleSGDError(Exception):
    """Base class for all package errors."""


class DimensionError(ShuffleSGDError, ValueError):
    pass


class IndexRangeError(ShuffleSGDError, IndexError):
    pass


class DivisibilityError(ShuffleSGDError, ValueError):
    """n is not a multiple of M*b."""


class BudgetExceeded(ShuffleSGDError):
    """Exhaustive enumeration would exceed the configured work budget."""


class NoReferenceOptimum(ShuffleSGDError):
    """The objective family has no certified minimizer (MLP)."""


class ConvergenceError(ShuffleSGDError):
    pass


class NumericAbort(ShuffleSGDError):
    """A non-finite gradient or objective value appeared during training.

    ``trace`` holds the records collected before the abort.
    """

    def __init__(self, message, trace=None, location=None):
        super().__init__(message)
        self.trace = trace
        self.location = location


class InconsistentHistory(ShuffleSGDError, ValueError):
    pass
