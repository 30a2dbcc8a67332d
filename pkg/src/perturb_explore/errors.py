class ConfigurationError(ValueError):
    """Invalid configuration, shapes, or environment definitions."""


class UsageError(ValueError):
    """An operation was called with arguments outside its contract."""


class DensityError(ValueError):
    """A density pair cannot produce a pseudo-count."""


class AggregationError(ValueError):
    """Episode records cannot be summarized or compared."""


class NumericalError(ArithmeticError):
    """A loss or gradient became non-finite. The run must abort."""
