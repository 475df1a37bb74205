"""Exception hierarchy shared across the package.

Every error raised on purpose by this package derives from
:class:`HgllimError`, so callers can catch one base class. The subclasses
split along the lines the command-line tool needs for its exit codes:
caller mistakes (:class:`ContractError`), malformed external data
(:class:`DataError`) and numerical failures (the rest).
"""


class HgllimError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(HgllimError, ValueError):
    """A caller violated a documented precondition (shapes, finiteness, ...)."""


class DataError(HgllimError):
    """External input (CSV rows, binary containers, images) is malformed."""


class IllConditionedModelError(HgllimError):
    """A model matrix is singular or numerically unusable.

    Carries the offending component index so large sweeps can report which
    mixture component went bad.
    """

    def __init__(self, message: str, component: int | None = None):
        if component is not None:
            message = f"component {component}: {message}"
        super().__init__(message)
        self.component = component


class DegenerateInputError(HgllimError):
    """An input point is so far from the model that every weight underflows."""


class TrainingFailedError(HgllimError):
    """Training could not produce a usable model (collapse, bad init, ...)."""


class InternalConsistencyError(HgllimError):
    """An internal invariant broke; this signals a bug, not a user error."""


class GridResolutionError(HgllimError):
    """A quadrature grid is too coarse for the requested tolerance."""
