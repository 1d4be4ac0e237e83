"""Exception hierarchy for polylab.

All exceptions inherit from :class:`PolylabError` so callers can
catch broadly or narrowly as needed.
"""

from __future__ import annotations

from collections.abc import Sequence


class PolylabError(Exception):
    """Base exception for all polylab errors."""


class SpecError(PolylabError):
    """Invalid environment specification or malformed spec JSON."""


class ConditionError(PolylabError):
    """The environment law violates a standing integrability condition.

    Parameters
    ----------
    failed:
        Names of the failed conditions, e.g. ``["(1)"]``.
    """

    def __init__(self, message: str, failed: Sequence[str] = ()) -> None:
        super().__init__(message)
        self.failed = list(failed)


class BudgetError(PolylabError):
    """A memory or enumeration budget would be exceeded.

    Parameters
    ----------
    parameter:
        Name of the parameter that hits the limit (``"n"``, ``"d"``, ...).
    """

    def __init__(self, message: str, parameter: str = "") -> None:
        super().__init__(message)
        self.parameter = parameter


class LogWeightOverflowError(PolylabError):
    """A site weight beta * eta evaluated to a non-finite number."""


class NormalizationError(PolylabError):
    """A probability slice does not sum to one within tolerance."""


class StreamOrderError(PolylabError):
    """Reports reached a Cesaro accumulator out of order or with gaps."""


class GridError(PolylabError):
    """A beta grid or interval is not increasing or reaches past R."""


class SpecMismatchError(PolylabError):
    """Estimates combined in one check come from different specs or dimensions."""


class ProjectionError(PolylabError):
    """A point could not be projected onto a constraint set."""


class SampleError(PolylabError):
    """A Monte Carlo sample bank contains a non-finite value."""


class ConfigError(PolylabError):
    """Experiment configuration is missing a field or is inconsistent."""


class VerificationError(PolylabError):
    """An assertion suite reported at least one failed verdict."""
