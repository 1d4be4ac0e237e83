"""Tests for polylab.atoms (atom reports, schedules and Cesaro statistics)."""

from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polylab import dp
from polylab.atoms import (
    AtomReport,
    AtomTracker,
    CesaroTrace,
    FixedEps,
    LogEps,
    PowerEps,
    atom_report,
    best_schedule,
    cesaro_statistics,
    parse_schedule,
)
from polylab.env import PRESETS, EnvField
from polylab.exceptions import NormalizationError, StreamOrderError
from polylab.types import LatticeSlice


def _slice(j: int, mapping: dict) -> LatticeSlice:
    return LatticeSlice.from_mapping(j, mapping, half_width=10)


def _report(j: int, mass: float, has_atom: bool = True, ge_delta: bool = False, eps: float = 0.1) -> AtomReport:
    return AtomReport(j, eps, 0.5, [], mass, mass, has_atom, ge_delta)


class TestAtomReport:
    def test_example(self):
        nu = _slice(1, {(0, 1): 0.7, (1, 0): 0.2, (0, -1): 0.1})
        report = atom_report(nu, 0.15, 0.85)
        assert sorted(report.atom_sites) == [(0, 1), (1, 0)]
        assert report.atom_mass == pytest.approx(0.9)
        assert report.favorite_mass == pytest.approx(0.7)
        assert report.event_has_atom
        assert report.event_mass_ge_delta

    def test_threshold(self):
        nu = _slice(2, {(0,): 0.5, (2,): 0.25, (-2,): 0.25})
        assert atom_report(nu, 0.5 - 1e-9, 0.4).event_has_atom
        report = atom_report(nu, 0.5 + 1e-9, 0.4)
        assert report.atom_sites == []
        assert report.atom_mass == 0.0
        assert not report.event_has_atom
        assert not report.event_mass_ge_delta

    def test_uniform_law_has_no_atom(self):
        nu = _slice(2, {(0,): 0.5, (2,): 0.25, (-2,): 0.25})
        assert not atom_report(nu, 0.6, 0.1).event_has_atom

    def test_unnormalized(self):
        nu = _slice(1, {(1,): 0.5, (-1,): 0.4})
        with pytest.raises(NormalizationError, match="total mass"):
            atom_report(nu, 0.1, 0.5)

    @pytest.mark.parametrize(("eps", "delta"), [(0.0, 0.5), (1.0, 0.5), (0.1, 0.0), (0.1, 1.0)])
    def test_parameter_range(self, eps, delta):
        nu = _slice(1, {(1,): 0.5, (-1,): 0.5})
        with pytest.raises(ValueError):
            atom_report(nu, eps, delta)

    def test_to_dict(self):
        nu = _slice(1, {(1,): 0.75, (-1,): 0.25})
        data = atom_report(nu, 0.5, 0.5).to_dict()
        assert set(data) == {"j", "eps", "atom_mass", "favorite", "evA", "evAd"}
        assert data["j"] == 1
        assert data["atom_mass"] == pytest.approx(0.75)
        assert data["evA"] is True
        assert data["evAd"] is True

    def test_mass_at_most_one(self):
        state = dp.evolve(EnvField(PRESETS["exp1"], 2), 0.9, 30, 2)
        report = atom_report(state.nu, 0.01, 0.5)
        assert 0.0 <= report.atom_mass <= 1.0 + 1e-12
        assert report.favorite_mass <= report.atom_mass or not report.event_has_atom


class TestSchedules:
    def test_fixed(self):
        schedule = FixedEps(0.1)
        assert schedule(1) == schedule(1000) == 0.1
        assert schedule.label == "fixed:0.1"

    def test_log(self):
        schedule = LogEps(1.0)
        assert schedule(1) == pytest.approx(1 / math.log(3))
        assert schedule(100) < schedule(10)
        assert schedule.label == "log:1"

    def test_log_range(self):
        with pytest.raises(ValueError, match="ln 3"):
            LogEps(1.2)

    def test_power(self):
        schedule = PowerEps(0.5, 0.5)
        assert schedule(4) == pytest.approx(0.25)
        assert schedule.label == "power:0.5,0.5"

    def test_fixed_range(self):
        with pytest.raises(ValueError):
            FixedEps(1.0)

    @pytest.mark.parametrize(
        ("text", "expected"),
        [
            ("fixed:0.05", FixedEps(0.05)),
            ("0.2", FixedEps(0.2)),
            ("log:0.9", LogEps(0.9)),
            ("power:0.4,0.25", PowerEps(0.4, 0.25)),
        ],
    )
    def test_parse(self, text, expected):
        assert parse_schedule(text) == expected

    def test_parse_unknown(self):
        with pytest.raises(ValueError, match="unknown schedule"):
            parse_schedule("exp:1")


class TestCesaroTrace:
    def test_running_means(self):
        trace = CesaroTrace("fixed:0.1")
        trace.add(_report(1, 0.2, ge_delta=False))
        trace.add(_report(2, 0.6, ge_delta=True))
        trace.add(_report(3, 0.4, has_atom=False))
        assert trace.n == 3
        assert trace.atom_mass_mean == pytest.approx(0.4)
        assert trace.has_atom_rate == pytest.approx(2 / 3)
        assert trace.mass_ge_delta_rate == pytest.approx(1 / 3)
        assert trace.history == pytest.approx([0.2, 0.4, 0.4])

    def test_empty(self):
        trace = CesaroTrace()
        assert trace.atom_mass_mean == 0.0
        assert trace.has_atom_rate == 0.0

    def test_gap_rejected(self):
        trace = CesaroTrace("x")
        trace.add(_report(1, 0.1))
        with pytest.raises(StreamOrderError, match="expected j=2"):
            trace.add(_report(3, 0.1))

    def test_repeat_rejected(self):
        trace = CesaroTrace()
        trace.add(_report(1, 0.1))
        with pytest.raises(StreamOrderError):
            trace.add(_report(1, 0.1))

    def test_to_dict(self):
        trace = CesaroTrace("log:1")
        trace.add(_report(1, 0.5, ge_delta=True))
        data = trace.to_dict()
        assert data["schedule"] == "log:1"
        assert data["evAd_rate"] == 1.0


class TestCesaroStatistics:
    def test_accumulates(self):
        trace = cesaro_statistics([_report(1, 0.3), _report(2, 0.1)])
        assert trace.atom_mass_mean == pytest.approx(0.2)

    def test_schedule_checked(self):
        reports = [_report(1, 0.3, eps=0.1), _report(2, 0.1, eps=0.2)]
        with pytest.raises(ValueError, match="schedule gives"):
            cesaro_statistics(reports, FixedEps(0.1))

    def test_order_checked(self):
        with pytest.raises(StreamOrderError):
            cesaro_statistics([_report(2, 0.3)])


class TestAtomTracker:
    def test_tracks_every_schedule(self):
        tracker = AtomTracker([FixedEps(0.2), LogEps(1.0)], delta=0.5, keep_reports=True)
        dp.evolve(EnvField(PRESETS["pareto4"], 3), 4.0, 25, 1, tracker)
        assert [t.n for t in tracker.traces] == [25, 25]
        assert len(tracker.reports) == 50
        assert [row["schedule"] for row in tracker.summary()] == ["fixed:0.2", "log:1"]

    def test_zero_beta_has_no_large_atoms(self):
        tracker = AtomTracker([FixedEps(0.6)], delta=0.5)
        dp.evolve(EnvField(PRESETS["gauss"], 3), 0.0, 10, 1, tracker)
        assert tracker.traces[0].has_atom_rate == 0.0

    def test_trace_matches_offline_statistics(self):
        schedule = LogEps(0.8)
        tracker = AtomTracker([schedule], delta=0.4, keep_reports=True)
        dp.evolve(EnvField(PRESETS["exp1"], 9), 0.8, 15, 2, tracker)
        offline = cesaro_statistics(tracker.reports, schedule)
        assert offline.to_dict() == tracker.traces[0].to_dict()

    def test_requires_schedule(self):
        with pytest.raises(ValueError, match="schedule"):
            AtomTracker([], delta=0.5)

    def test_best_schedule(self):
        low, high = CesaroTrace("a"), CesaroTrace("b")
        low.add(_report(1, 0.1, ge_delta=False))
        high.add(_report(1, 0.9, ge_delta=True))
        assert best_schedule([low, high]) is high
        assert best_schedule([high, low]) is high

    def test_best_schedule_ties_go_first(self):
        a, b = CesaroTrace("a"), CesaroTrace("b")
        assert best_schedule([a, b]) is a

    def test_best_schedule_equal_rates_use_atom_mass(self):
        light, heavy = CesaroTrace("light"), CesaroTrace("heavy")
        light.add(_report(1, 0.6, ge_delta=True))
        heavy.add(_report(1, 0.8, ge_delta=True))
        assert best_schedule([light, heavy]) is heavy
        assert best_schedule([heavy, light]) is heavy

    def test_free_walk_loses_its_atoms(self):
        # At beta=0 nu_j is the binomial law; its top mass drops below 0.15 from j=28 on.
        tracker = AtomTracker([FixedEps(0.15)], delta=0.5)
        dp.evolve(EnvField(PRESETS["gauss"], 0), 0.0, 100, 1, tracker)
        trace = tracker.traces[0]
        assert trace.has_atom_rate == pytest.approx(27 / 100)
        assert trace.history[-1] == pytest.approx(trace.history[26] * 27 / 100)
        assert trace.history[-1] < trace.history[26]

    def test_reports_along_a_run_satisfy_coupling(self):
        tracker = AtomTracker([FixedEps(0.1), LogEps(1.0)], delta=0.6, keep_reports=True)
        dp.evolve(EnvField(PRESETS["pareto4"], 5), 4.0, 40, 1, tracker)
        for report in tracker.reports:
            assert report.atom_mass >= report.delta * report.event_mass_ge_delta


_weights = st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=1, max_size=10)
_unit = st.floats(min_value=0.01, max_value=0.99)


def _normalized(weights: list[float]) -> LatticeSlice:
    total = math.fsum(weights)
    return _slice(3, {(k, 0): w / total for k, w in enumerate(weights)})


class TestAtomProperties:
    @settings(max_examples=80, deadline=None)
    @given(weights=_weights, eps=_unit, shrink=st.floats(min_value=0.05, max_value=1.0), delta=_unit)
    def test_smaller_eps_keeps_more_atoms(self, weights, eps, shrink, delta):
        nu = _normalized(weights)
        coarse = atom_report(nu, eps, delta)
        fine = atom_report(nu, eps * shrink, delta)
        assert set(coarse.atom_sites) <= set(fine.atom_sites)
        assert fine.atom_mass >= coarse.atom_mass
        assert fine.event_mass_ge_delta or not coarse.event_mass_ge_delta

    @settings(max_examples=80, deadline=None)
    @given(weights=_weights, eps=_unit, delta=_unit)
    def test_atom_mass_covers_event(self, weights, eps, delta):
        nu = _normalized(weights)
        report = atom_report(nu, eps, delta)
        assert report.atom_mass >= delta * report.event_mass_ge_delta
        assert report.atom_mass == pytest.approx(math.fsum(nu.get(site) for site in report.atom_sites), abs=1e-12)
        assert report.event_has_atom == bool(report.atom_sites)
