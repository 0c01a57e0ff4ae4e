"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
2 for bad parameters, 3 for numerical failures, 4 for I/O.
"""


class DtxError(Exception):
    exit_code = 1


class ParameterError(DtxError, ValueError):
    """Invalid argument, dimension mismatch or violated precondition."""

    exit_code = 2


class DomainError(ParameterError):
    """A discount factor or configuration outside the supported domain."""


class AssumptionError(ParameterError):
    """Declared absorbing states do not self-loop or carry non-zero reward."""


class InfiniteBoundError(ParameterError):
    """The requested error bound is vacuous (e.g. gamma_prime == 1)."""


class UndefinedWeightError(ParameterError):
    """The mixture weight vector does not exist for gamma_prime == 1."""


class RangeError(ParameterError, OverflowError):
    """An integer result exceeds the representable range."""


class NumericError(DtxError, ArithmeticError):
    exit_code = 3


class IllConditionedError(NumericError):
    """A linear system is too ill-conditioned to solve reliably."""


class NonAbsorbingError(NumericError):
    """The transient block of a supposedly absorbing chain is singular."""


class TruncationError(NumericError):
    """A sampled time index falls beyond the end of a finite trajectory."""


class DivergenceError(NumericError):
    """Policy parameters blew past the divergence guard."""


class DtxIOError(DtxError, OSError):
    exit_code = 4
