"""Exception hierarchy shared by every module."""


class AARError(Exception):
    """Base class for all library errors."""


class InvalidInput(AARError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateSpread(AARError, ArithmeticError):
    """The median absolute deviation of a batch is zero."""


class DegenerateInput(AARError, ValueError):
    """A batch carries too little variation to fit a mixture."""


class NumericalFailure(AARError, ArithmeticError):
    """A computation produced non-finite values."""


class NoRoot(AARError, ArithmeticError):
    """A bracketed root search found no sign change."""
