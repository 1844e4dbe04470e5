"""Exception types shared across the package."""


class DataError(Exception):
    """Input data is missing, malformed or unusable."""


class NumericalError(Exception):
    """A numerical routine diverged or produced non-finite values."""


class ContractError(ValueError):
    """An argument violates the documented domain of an operation."""
