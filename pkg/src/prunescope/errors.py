"""Exception hierarchy.

Every error carries an ``exit_code`` used by the CLI: 2 for data problems,
3 for numerical failures.
"""


class PrunescopeError(Exception):
    exit_code = 2


class DataError(PrunescopeError, ValueError):
    exit_code = 2


class NumericalError(PrunescopeError, ArithmeticError):
    exit_code = 3


class InvalidParameter(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class SplitMismatch(DataError):
    pass


class InvalidLabel(DataError):
    pass


class EmptySplit(DataError):
    pass


class InsufficientData(DataError):
    pass


class ParseError(DataError):
    pass


class RaggedRows(ParseError):
    pass


class NonNumericCell(ParseError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class ConvergenceFailure(NumericalError):
    pass


class NonFiniteSample(NumericalError):
    pass


class OverflowGuard(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    pass
