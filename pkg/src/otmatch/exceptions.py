"""Exception hierarchy shared by the library and the command line."""


class OTMatchError(Exception):
    """Base class for all library errors."""


class InputError(OTMatchError, ValueError):
    """Malformed or inconsistent input (shapes, ranges, missing columns)."""


class NumericalError(OTMatchError, ArithmeticError):
    """A computation produced non-finite values or could not proceed."""


class NoOverlapError(NumericalError):
    """Every unit of an arm was dropped by the unbalanced coupling."""


class SeparationError(NumericalError):
    """Perfect separation in the logistic propensity fit."""
