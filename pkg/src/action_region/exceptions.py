"""Exception hierarchy.

``DataError`` covers malformed or inconsistent inputs, ``NumericalError``
covers undefined quantities produced during computation. The CLI maps these
to exit codes 3 and 4.
"""


class ActionRegionError(Exception):
    pass


class DataError(ActionRegionError, ValueError):
    pass


class DimensionMismatchError(DataError):
    pass


class FormatError(DataError):
    pass


class ProviderError(ActionRegionError):
    """A probability provider could not produce a distribution."""


class NumericalError(ActionRegionError, ArithmeticError):
    pass
