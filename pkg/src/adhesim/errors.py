"""Exception hierarchy shared by all adhesim modules."""

from __future__ import annotations


class AdhesimError(Exception):
    """Base class for every error raised by adhesim."""


class InvalidSpecError(AdhesimError, ValueError):
    """A geometry, kernel or model specification is malformed."""


class ResolutionError(InvalidSpecError):
    """The grid spacing is too coarse to resolve the domain boundary."""


class BandOverlapError(InvalidSpecError):
    """The normal-extension band is wider than the domain allows."""


class UnsupportedGeometryError(AdhesimError):
    """An operation was requested on a geometry it is not defined for."""


class DimensionError(AdhesimError, ValueError):
    """Field arrays do not match the geometry they are used with."""


class PropagationError(AdhesimError, FloatingPointError):
    """NaN or Inf detected in an intermediate quantity."""


class InstabilityError(AdhesimError):
    """The explicit scheme lost stability or positivity.

    ``diagnostics`` carries a JSON-serialisable dict describing the failing
    step (index, time, sup norms, ...).
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class DomainError(AdhesimError, ValueError):
    """A functional was evaluated outside its domain of definition."""


class ConfigError(AdhesimError):
    """Configuration validation failed; ``errors`` lists every problem."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


class SnapshotError(AdhesimError):
    """A snapshot file is truncated, corrupted or inconsistent."""


class PicardConvergenceError(AdhesimError):
    """The Picard iteration did not contract within the iteration budget."""

    def __init__(self, message: str, history: list[float], factors: list[float]):
        super().__init__(message)
        self.history = list(history)
        self.factors = list(factors)
