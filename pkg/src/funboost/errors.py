"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front end:
2 for configuration problems, 3 for data problems, 4 for numerical failures.
"""


class FunboostError(Exception):
    exit_code = 4


class ConfigError(FunboostError):
    exit_code = 2


class DataProblem(FunboostError):
    exit_code = 3


class ParseError(DataProblem):
    pass


class GridError(DataProblem):
    pass


class SchemaError(DataProblem):
    pass


class DegenerateColumnError(DataProblem):
    pass


class DataError(DataProblem):
    pass


class DegenerateDataError(DataProblem):
    pass


class DomainMismatchError(DataProblem):
    pass


class PredictionError(DataProblem):
    pass


class EvalError(DataProblem):
    pass


class RangeError(DataProblem):
    pass


class NumericalError(FunboostError):
    exit_code = 4


class DimensionError(NumericalError):
    pass


class EmptyBasisError(NumericalError):
    pass


class InfeasibleDfError(NumericalError):
    pass


class SupportError(NumericalError):
    pass


class DomainError(NumericalError):
    pass


class SingularSystemError(NumericalError):
    pass


class ResampleError(NumericalError):
    pass


class DegenerateSmoothnessError(NumericalError):
    pass


class RangeZeroError(NumericalError):
    pass
