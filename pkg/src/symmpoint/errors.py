"""Exception types raised across the package.

The CLI maps these onto exit codes: parse/IO problems exit 2, metric or
geometry precondition failures exit 3.
"""


class SymmPointError(Exception):
    pass


class NonFinite(SymmPointError, ValueError):
    pass


class ZeroNormal(SymmPointError, ValueError):
    pass


class EmptyCloud(SymmPointError, ValueError):
    pass


class SizeMismatch(SymmPointError, ValueError):
    pass


class TooLarge(SymmPointError, ValueError):
    pass


class NonConvergence(SymmPointError, RuntimeError):
    pass


class NonPositiveThreshold(SymmPointError, ValueError):
    pass


class DegenerateCloud(SymmPointError, ValueError):
    pass


class NoSurface(SymmPointError, ValueError):
    pass


class ZeroVector(SymmPointError, ValueError):
    pass


class DimensionMismatch(SymmPointError, ValueError):
    pass


class NonPositive(SymmPointError, ValueError):
    pass


class ParseError(SymmPointError, ValueError):
    """Malformed input file. ``location`` is a line number or byte offset."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        if location is not None:
            message = f"{message} ({location})"
        super().__init__(message)


class UnsupportedFormat(SymmPointError, ValueError):
    pass
