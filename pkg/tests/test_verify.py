"""Tests for polylab.verify (assertion suites)."""

from __future__ import annotations

import pytest

from polylab import verify
from polylab.simplex import UtileRow, UtileTable
from polylab.verify import SUITES, SuiteReport, Verdict, verify_suite


class TestVerdicts:
    def test_worked_example(self):
        verdict = verify._worked_example()
        assert verdict.passed
        assert verdict.detail["rho_1"] == pytest.approx(2 / 3)

    def test_report(self):
        report = SuiteReport("x", "quick", [Verdict("a", True), Verdict("b", False, {"err": 1.0})])
        assert not report.passed
        assert [v.name for v in report.failed()] == ["b"]
        data = report.to_dict()
        assert data["passed"] is False
        assert data["verdicts"][1] == {"name": "b", "passed": False, "detail": {"err": 1.0}}

    def test_empty_report_passes(self):
        assert SuiteReport("x", "quick").passed


class TestVerifySuite:
    def test_names(self):
        assert set(SUITES) == {"oracle", "bounds", "lemmas", "localization"}

    def test_unknown_suite(self):
        with pytest.raises(ValueError, match="unknown suite"):
            verify_suite("everything")

    def test_unknown_scale(self):
        with pytest.raises(ValueError, match="unknown scale"):
            verify_suite("oracle", scale="huge")

    def test_oracle_quick(self):
        report = verify_suite("oracle")
        assert [v.name for v in report.verdicts] == [
            "worked_example",
            "oracle_equivalence_d1",
            "oracle_equivalence_d2",
        ]
        assert report.passed, report.failed()
        assert report.seconds > 0

    def test_localization_quick(self):
        report = verify_suite("localization")
        assert [v.name for v in report.verdicts] == [
            "atom_mass_increasing_in_beta",
            "atom_mass_floor_at_beta8",
            "martingale_lln",
            "localization_budget_finite",
        ]
        assert report.passed, report.failed()
        martingale = report.verdicts[2].detail
        assert martingale["replicas"] == 16
        assert martingale["mean_abs_early"] > martingale["mean_abs_late"]

    def test_averaged_moment_uses_full_sample_size(self, monkeypatch):
        calls = []

        def record(spec, interval, n_list, m, seed):
            calls.append((list(n_list), m))
            table = UtileTable(spec, interval, 0.125, 0.5)
            table.rows = [UtileRow(n, 0.5, 0.125, 0.001) for n in n_list]
            return table

        monkeypatch.setattr(verify.simplex, "lemma_utile_check", record)
        verdicts = verify._utile(verify._SCALES["full"])
        assert calls == [([10, 100, 1000, 10_000], 100_000)]
        assert all(v.passed for v in verdicts)
