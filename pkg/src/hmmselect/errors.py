"""Exception hierarchy shared across the package."""


class HmmSelectError(Exception):
    """Base class for all package errors."""


class NonIrreducible(HmmSelectError):
    """Transition matrix whose directed graph is not strongly connected."""


class SolverFailure(HmmSelectError):
    pass


class InvalidParams(HmmSelectError):
    pass


class DimensionMismatch(HmmSelectError):
    pass


class OutOfDomain(HmmSelectError):
    """Observation value outside [0, 1]."""


class QuadratureNotConverged(HmmSelectError):
    pass


class IndexOutOfRange(HmmSelectError):
    pass


class OptimizerDiverged(HmmSelectError):
    pass


class EmptyGrid(HmmSelectError):
    pass


class NegativeSlope(HmmSelectError):
    """Slope calibration found a nonpositive slope; penalty shape suspect."""


class InsufficientData(HmmSelectError):
    pass


class IllConditioned(HmmSelectError):
    pass


class ComplexEigenvalues(HmmSelectError):
    pass


class DegenerateRegression(HmmSelectError):
    pass


class ConfigError(HmmSelectError):
    pass


class MissingCache(HmmSelectError):
    pass
