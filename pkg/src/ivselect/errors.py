"""Exception hierarchy.

``DataError`` subclasses describe bad input (the CLI maps them to exit code 1),
``EstimationError`` subclasses describe a statistical procedure that could not
produce an answer on otherwise valid input (exit code 2).
"""


class IVError(Exception):
    """Base class for all package errors."""


class DataError(IVError):
    pass


class MissingColumn(DataError):
    pass


class ConstantColumn(DataError):
    pass


class SampleTooSmall(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class EstimationError(IVError):
    pass


class RankDeficient(EstimationError):
    pass


class NotConverged(EstimationError):
    pass


class OneClassOnly(EstimationError):
    pass


class NoRelevantIV(EstimationError):
    pass


class DivisionGuard(EstimationError):
    pass


class SingularWeight(EstimationError):
    pass


class EmptySearchSet(EstimationError):
    def __init__(self, message, grid=None):
        super().__init__(message)
        self.grid = grid


class EmptyGraph(EstimationError):
    pass


class UnderIdentified(EstimationError):
    pass


class TooManyFailures(EstimationError):
    pass
