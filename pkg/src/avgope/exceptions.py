"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`AvgOPEError`, and input problems additionally derive from
``ValueError`` so callers that only know the builtin still catch them.
"""


class AvgOPEError(Exception):
    """Base class for all package errors."""


class DataError(AvgOPEError, ValueError):
    """Malformed trajectory data."""


class EmptyDataset(DataError):
    pass


class RaggedTrajectories(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class ActionOutOfRange(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class MissingColumn(DataError):
    pass


class NonContiguousTime(DataError):
    pass


class AdjacencyViolation(DataError):
    pass


class InvalidPolicyOutput(AvgOPEError, ValueError):
    pass


class DegenerateStates(AvgOPEError, ValueError):
    pass


class AnchorDegenerate(AvgOPEError, ValueError):
    pass


class SingularSystem(AvgOPEError, ArithmeticError):
    pass


class MismatchedFits(AvgOPEError, ValueError):
    pass


class IndexOutOfRange(AvgOPEError, IndexError):
    pass


class TooFewTrajectories(AvgOPEError, ValueError):
    pass


class EmptyValidation(AvgOPEError, ValueError):
    pass


class NotIrreducible(AvgOPEError, ValueError):
    pass


class NoStationaryDistribution(AvgOPEError, ArithmeticError):
    pass


class ConfigError(AvgOPEError, ValueError):
    """Invalid run configuration (unknown key, bad type)."""


class StudyFailure(AvgOPEError, RuntimeError):
    """Too many failed replications in a Monte-Carlo study."""
