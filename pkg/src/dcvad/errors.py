"""Exception hierarchy.

Every error carries the process exit status the CLI maps it to:
1 usage/config, 2 data, 3 numeric failure.
"""


class DcvadError(Exception):
    exit_code = 2


class ConfigError(DcvadError, ValueError):
    exit_code = 1


class DimensionError(ConfigError):
    pass


class InvalidInputError(DcvadError, ValueError):
    pass


class RangeError(DcvadError, IndexError):
    pass


class ShapeError(DcvadError, ValueError):
    pass


class AlignmentError(DcvadError, ValueError):
    pass


class ComparisonError(DcvadError, ValueError):
    pass


class EmptyTrainingSetError(DcvadError, ValueError):
    pass


class UndefinedAUCError(DcvadError, ValueError):
    pass


class IncompleteGradientError(DcvadError, KeyError):
    exit_code = 3


class DeterminismError(DcvadError, RuntimeError):
    exit_code = 3


class NumericOverflowError(DcvadError, ArithmeticError):
    exit_code = 3
