"""Exception hierarchy shared across the package."""


class MapBorrowError(Exception):
    """Base class for all package errors."""


class DomainError(MapBorrowError, ValueError):
    """An argument lies outside the domain of a function."""


class DataError(MapBorrowError, ValueError):
    """Trial data are malformed or degenerate."""


class NumericalError(MapBorrowError, ArithmeticError):
    """A numerical routine failed to reach its tolerance."""
