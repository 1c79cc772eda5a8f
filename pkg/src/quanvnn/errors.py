"""Exception types shared across the package."""


class QuanvError(Exception):
    """Base class for package errors."""


class ShapeError(QuanvError, ValueError):
    """An array argument has the wrong shape."""


class NumericError(QuanvError, ArithmeticError):
    """A non-finite value reached a numerical routine."""


class UnsupportedGateError(QuanvError, ValueError):
    """A gate cannot be handled by the requested routine."""
