"""Exception hierarchy.

Errors fall in two families so that callers (the CLI in particular) can map
them onto exit codes: :class:`DataError` for invalid inputs and
:class:`NumericalError` for failures of a numerical method.
"""


class FosdaError(Exception):
    """Base class for all package errors."""


class DataError(FosdaError, ValueError):
    """Input data violates a precondition."""


class NumericalError(FosdaError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy answer."""


class ParseError(DataError):
    pass


class ValidationError(DataError):
    pass


class DegenerateTriangle(ValidationError):
    pass


class ConnectivityMismatch(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class LimitExceeded(DataError):
    pass


class SingleClassError(DataError):
    pass


class KernelMismatch(DataError):
    pass


class NonPositivePenalty(DataError):
    pass


class MissingGeometry(DataError):
    pass


class BasisTooSmall(DataError):
    pass


class ConvergenceFailure(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class RankDeficiency(NumericalError):
    pass


class SingularCovariance(NumericalError):
    pass
