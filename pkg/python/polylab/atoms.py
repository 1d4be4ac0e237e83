"""Epsilon-atoms of the predictive law and their Cesaro statistics.

A site is an epsilon-atom at time ``j`` when ``nu_j(x) > eps`` (strict). The
two events tracked per step are

- ``A_j^{eps,beta}``: some site is an atom (``favorite_mass > eps``);
- ``A_j^{eps,delta,beta}``: the atoms carry mass ``>= delta``.

Usage::

    tracker = AtomTracker([FixedEps(0.15), LogEps(1.0)], delta=0.5)
    evolve(field, beta, n, d, observer=tracker)
    tracker.traces[0].atom_mass_mean
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any, Protocol

from polylab.exceptions import NormalizationError, StreamOrderError
from polylab.types import LatticeSlice

logger = logging.getLogger(__name__)

__all__ = [
    "AtomReport",
    "CesaroTrace",
    "EpsSchedule",
    "FixedEps",
    "LogEps",
    "PowerEps",
    "AtomTracker",
    "atom_report",
    "cesaro_statistics",
    "parse_schedule",
    "best_schedule",
]

NORMALIZATION_TOLERANCE = 1e-6


@dataclass(frozen=True)
class AtomReport:
    """Atoms of one predictive slice.

    Attributes
    ----------
    j:
        Time of the slice.
    eps, delta:
        Thresholds the report was computed with.
    atom_sites:
        Sites with ``nu_j(x) > eps``, in key order.
    atom_mass:
        ``nu_j`` of the atom set.
    favorite_mass:
        ``max_x nu_j(x)``.
    event_has_atom:
        ``A_j^{eps,beta}``.
    event_mass_ge_delta:
        ``A_j^{eps,delta,beta}``.
    """

    j: int
    eps: float
    delta: float
    atom_sites: list[tuple[int, ...]]
    atom_mass: float
    favorite_mass: float
    event_has_atom: bool
    event_mass_ge_delta: bool

    def to_dict(self) -> dict[str, Any]:
        """JSONL row: ``{"j", "eps", "atom_mass", "favorite", "evA", "evAd"}``."""
        return {
            "j": self.j,
            "eps": self.eps,
            "atom_mass": self.atom_mass,
            "favorite": self.favorite_mass,
            "evA": self.event_has_atom,
            "evAd": self.event_mass_ge_delta,
        }


def atom_report(nu: LatticeSlice, eps: float, delta: float) -> AtomReport:
    """Evaluate the atom set and both events on ``nu``.

    Raises
    ------
    NormalizationError
        If ``nu`` does not sum to one within 1e-6.
    """
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    probs = nu.probabilities()
    total = math.fsum(probs)
    if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
        raise NormalizationError(f"slice j={nu.j} has total mass {total!r}")

    mask = probs > eps
    atom_mass = math.fsum(probs[mask])
    favorite = float(probs.max()) if probs.size else 0.0
    sites = [tuple(row.tolist()) for row in nu.sites[mask]]
    return AtomReport(
        j=nu.j,
        eps=eps,
        delta=delta,
        atom_sites=sites,
        atom_mass=atom_mass,
        favorite_mass=favorite,
        event_has_atom=favorite > eps,
        event_mass_ge_delta=atom_mass >= delta,
    )


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


class EpsSchedule(Protocol):
    """Threshold applied at step ``j``."""

    label: str

    def __call__(self, j: int) -> float: ...


@dataclass(frozen=True)
class FixedEps:
    eps: float

    def __post_init__(self) -> None:
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")

    @property
    def label(self) -> str:
        return f"fixed:{self.eps:g}"

    def __call__(self, j: int) -> float:
        return self.eps


@dataclass(frozen=True)
class LogEps:
    """``eps_j = c / ln(j + 2)``."""

    c: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.c < math.log(3.0):
            raise ValueError(f"c must lie in (0, ln 3) so that eps_1 < 1, got {self.c}")

    @property
    def label(self) -> str:
        return f"log:{self.c:g}"

    def __call__(self, j: int) -> float:
        return self.c / math.log(j + 2)


@dataclass(frozen=True)
class PowerEps:
    """``eps_j = c * j^(-gamma)``."""

    c: float = 0.5
    gamma: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.c < 1 or self.gamma <= 0:
            raise ValueError(f"need 0 < c < 1 and gamma > 0, got c={self.c}, gamma={self.gamma}")

    @property
    def label(self) -> str:
        return f"power:{self.c:g},{self.gamma:g}"

    def __call__(self, j: int) -> float:
        return self.c * j ** (-self.gamma)


def parse_schedule(text: str) -> EpsSchedule:
    """Parse ``fixed:EPS``, ``log:C`` or ``power:C,GAMMA``.

    A bare number is read as a fixed threshold.
    """
    kind, _, args = text.partition(":")
    if not args:
        return FixedEps(float(kind))
    values = [float(v) for v in args.split(",")]
    match kind:
        case "fixed":
            return FixedEps(*values)
        case "log":
            return LogEps(*values)
        case "power":
            return PowerEps(*values)
    raise ValueError(f"unknown schedule {text!r}; expected fixed:, log: or power:")


# ---------------------------------------------------------------------------
# Cesaro accumulation
# ---------------------------------------------------------------------------


@dataclass
class CesaroTrace:
    """Running Cesaro means over the reports seen so far.

    Reports must arrive as ``j = 1, 2, ...`` without gaps.
    """

    label: str = ""
    n: int = 0
    _mass: float = field(default=0.0, repr=False)
    _has_atom: int = field(default=0, repr=False)
    _mass_ge_delta: int = field(default=0, repr=False)
    _favorite: float = field(default=0.0, repr=False)
    history: list[float] = field(default_factory=list, repr=False)

    def add(self, report: AtomReport) -> None:
        if report.j != self.n + 1:
            raise StreamOrderError(
                f"trace {self.label!r} expected j={self.n + 1}, got j={report.j}"
            )
        self.n += 1
        self._mass += report.atom_mass
        self._has_atom += int(report.event_has_atom)
        self._mass_ge_delta += int(report.event_mass_ge_delta)
        self._favorite += report.favorite_mass
        self.history.append(self.atom_mass_mean)

    @property
    def atom_mass_mean(self) -> float:
        return self._mass / self.n if self.n else 0.0

    @property
    def has_atom_rate(self) -> float:
        return self._has_atom / self.n if self.n else 0.0

    @property
    def mass_ge_delta_rate(self) -> float:
        return self._mass_ge_delta / self.n if self.n else 0.0

    @property
    def favorite_mean(self) -> float:
        return self._favorite / self.n if self.n else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "schedule": self.label,
            "n": self.n,
            "atom_mass_mean": self.atom_mass_mean,
            "evA_rate": self.has_atom_rate,
            "evAd_rate": self.mass_ge_delta_rate,
            "favorite_mean": self.favorite_mean,
        }


def cesaro_statistics(
    reports: Iterable[AtomReport], schedule: EpsSchedule | None = None
) -> CesaroTrace:
    """Accumulate ``reports`` into a :class:`CesaroTrace`.

    With a ``schedule``, each report must have been computed at
    ``eps = schedule(j)``.
    """
    trace = CesaroTrace(label=schedule.label if schedule is not None else "")
    for report in reports:
        if schedule is not None and not math.isclose(report.eps, schedule(report.j)):
            raise ValueError(
                f"report j={report.j} used eps={report.eps}, schedule gives {schedule(report.j)}"
            )
        trace.add(report)
    return trace


class AtomTracker:
    """Step observer feeding one Cesaro trace per schedule.

    Parameters
    ----------
    schedules:
        Thresholds to track side by side.
    delta:
        Mass level of the ``A^{eps,delta,beta}`` event.
    keep_reports:
        Retain every report (for JSONL output).
    """

    def __init__(
        self, schedules: Sequence[EpsSchedule], delta: float, *, keep_reports: bool = False
    ) -> None:
        if not schedules:
            raise ValueError("at least one schedule is required")
        self.schedules = list(schedules)
        self.delta = delta
        self.traces = [CesaroTrace(label=s.label) for s in self.schedules]
        self.reports: list[AtomReport] = []
        self._keep = keep_reports

    def __call__(self, j: int, nu: LatticeSlice, rho: LatticeSlice, increment: float) -> None:
        for schedule, trace in zip(self.schedules, self.traces):
            report = atom_report(nu, schedule(j), self.delta)
            trace.add(report)
            if self._keep:
                self.reports.append(report)

    def summary(self) -> list[dict[str, Any]]:
        return [trace.to_dict() for trace in self.traces]


def best_schedule(traces: Sequence[CesaroTrace]) -> CesaroTrace:
    """The trace with the highest ``A^{eps,delta}`` frequency.

    Equal frequencies are decided by mean atom mass; full ties go to the first.

    Picking the best grid point only bounds the achievable localization from
    below.
    """
    if not traces:
        raise ValueError("no traces given")
    return max(traces, key=lambda t: (t.mass_ge_delta_rate, t.atom_mass_mean))
