"""Taylor expansions of discount factors for tabular MDPs."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AssumptionError,
    DivergenceError,
    DomainError,
    DtxError,
    DtxIOError,
    IllConditionedError,
    InfiniteBoundError,
    NonAbsorbingError,
    NumericError,
    ParameterError,
    RangeError,
    TruncationError,
    UndefinedWeightError,
)
from .exact import ExpansionConfig  # noqa: E402
from .mdp import PolicyTable, TabularMdp, absorbing_decompose, induce, random_mdp  # noqa: E402
