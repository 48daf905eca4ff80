"""Exception hierarchy.

Each family maps to a stable CLI exit code: configuration problems exit 1,
data problems exit 2, everything else raised by the library exits 3.
"""


class FedStlfError(Exception):
    exit_code = 3


class ConfigurationError(FedStlfError, ValueError):
    exit_code = 1


class DataError(FedStlfError, ValueError):
    exit_code = 2


class ParseError(DataError):
    pass


class GapError(DataError):
    pass


class EmptyFileError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class DegenerateSeriesError(DataError):
    pass


class ShapeError(FedStlfError, ValueError):
    pass


class UsageError(FedStlfError, RuntimeError):
    pass


class AggregationError(FedStlfError, ValueError):
    pass


class NoEligibleClientsError(FedStlfError, RuntimeError):
    pass


class UndefinedMetricError(FedStlfError, ValueError):
    pass


class UndefinedGainError(FedStlfError, ValueError):
    pass
