"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConvergenceError(RuntimeError):
    """An iterative solver or quadrature routine failed to converge."""


class SchemaError(ValueError):
    """Inputs do not match the schema a fitted object was built with."""


class DataError(ValueError):
    """A dataset failed validation during ingestion."""


class NumericalOverflowError(ArithmeticError):
    """A computation produced non-finite intermediate values."""
