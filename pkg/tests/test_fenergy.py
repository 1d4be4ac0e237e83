"""Tests for polylab.fenergy (estimators, bounds and diagnostics)."""

from __future__ import annotations

import math

import numpy as np
import pytest

from polylab import fenergy
from polylab.env import PRESETS, EnvSpec, log_mgf
from polylab.exceptions import GridError, SpecMismatchError
from polylab.fenergy import (
    VERDICT_GUARANTEED,
    VERDICT_INCONCLUSIVE,
    bound_check,
    check_superadditive,
    estimate_alpha,
    estimate_p,
    gap_scan,
    lemma_dec_conditions,
    localization_bound,
    martingale_diagnostic,
    pathwise_bound_check,
)

GAUSS = PRESETS["gauss"]


class TestEstimateP:
    def test_zero_beta(self):
        est = estimate_p(GAUSS, 0.0, 20, 2, replicas=4, seed=1)
        assert est.mean == 0.0
        assert est.stderr == 0.0
        assert est.values == [0.0] * 4

    def test_degenerate_environment(self):
        est = estimate_p(EnvSpec.degenerate(0.3), 2.0, 15, 1, replicas=3, seed=0)
        assert est.mean == pytest.approx(0.6, abs=1e-12)
        assert est.stderr == 0.0

    def test_degenerate_environment_is_exact(self):
        est = estimate_p(EnvSpec.degenerate(0.7), 1.3, 40, 2, replicas=4, seed=5)
        assert est.mean == 1.3 * 0.7
        assert est.values == [1.3 * 0.7] * 4
        assert est.stderr == 0.0

    def test_replicas(self):
        with pytest.raises(ValueError, match="replicas"):
            estimate_p(GAUSS, 1.0, 5, 1, replicas=1, seed=0)

    def test_thread_count_does_not_change_values(self):
        one = estimate_p(PRESETS["exp1"], 0.5, 25, 2, replicas=6, seed=9, threads=1)
        many = estimate_p(PRESETS["exp1"], 0.5, 25, 2, replicas=6, seed=9, threads=4)
        assert one.values == many.values
        assert one.to_dict() == many.to_dict()

    def test_to_dict(self):
        data = estimate_p(GAUSS, 0.5, 5, 1, replicas=2, seed=3).to_dict()
        assert data["spec"] == GAUSS.to_dict()
        assert {"p_hat", "stderr", "beta", "n", "d", "replicas", "seed"} <= set(data)

    def test_below_annealed_on_average(self):
        est = estimate_p(GAUSS, 0.8, 40, 1, replicas=16, seed=4)
        assert est.mean <= log_mgf(GAUSS, 0.8) + 3 * est.stderr


class TestEstimateAlpha:
    def test_columns(self):
        est = estimate_alpha(PRESETS["exp1"], [5, 10, 20], 1, replicas=4, seed=2)
        assert est.n_list == [5, 10, 20]
        assert len(est.means) == len(est.stderrs) == 3
        assert len(est.values) == 4
        assert est.n == 20
        assert est.upper == pytest.approx(est.mean + 2 * est.stderr)
        assert est.to_dict()["biased_low"] is True

    @pytest.mark.parametrize("n_list", [[], [10, 5], [0, 5], [5, 5]])
    def test_bad_horizons(self, n_list):
        with pytest.raises(ValueError, match="n_list"):
            estimate_alpha(GAUSS, n_list, 1, replicas=4, seed=0)

    def test_replicas(self):
        with pytest.raises(ValueError, match="replicas"):
            estimate_alpha(GAUSS, [5], 1, replicas=1, seed=0)


class TestBoundCheck:
    def test_pathwise_part_always_holds(self):
        # Same replicas: ln Z_n <= beta * N(n) holds for each of them.
        p = estimate_p(GAUSS, 0.7, 30, 1, replicas=8, seed=1)
        a = estimate_alpha(GAUSS, [10, 30], 1, replicas=8, seed=1)
        report = bound_check(p, a, lam=math.inf)
        assert report.rhs == pytest.approx(0.7 * a.upper)
        assert report.passed

    def test_default_lambda(self):
        p = estimate_p(GAUSS, 0.5, 10, 1, replicas=4, seed=1)
        a = estimate_alpha(GAUSS, [10], 1, replicas=4, seed=1)
        report = bound_check(p, a)
        assert report.lam == pytest.approx(0.125)
        assert report.rhs == min(0.5 * a.upper, report.lam)
        assert set(report.to_dict()) >= {"p_hat", "rhs", "passed", "strictly_below_lambda"}

    def test_spec_mismatch(self):
        p = estimate_p(GAUSS, 0.5, 5, 1, replicas=2, seed=1)
        a = estimate_alpha(GAUSS, [5], 2, replicas=2, seed=1)
        with pytest.raises(SpecMismatchError):
            bound_check(p, a)
        b = estimate_alpha(PRESETS["exp1"], [5], 1, replicas=2, seed=1)
        with pytest.raises(SpecMismatchError):
            bound_check(p, b)


class TestSuperadditive:
    def test_degenerate_is_additive(self):
        report = check_superadditive(EnvSpec.degenerate(0.3), 1.0, 10, 15, 1, replicas=2, seed=0)
        assert report.lhs == pytest.approx(report.rhs, abs=1e-10)
        assert report.passed

    def test_zero_beta(self):
        report = check_superadditive(GAUSS, 0.0, 4, 6, 2, replicas=2, seed=0)
        assert report.lhs == report.rhs == 0.0
        assert report.to_dict()["passed"] is True


class TestPathwise:
    def test_passes(self):
        report = pathwise_bound_check(GAUSS, 1.0, 8, 1, replicas=3, seed=5, levels=(0.5, 1.0, 2.0))
        assert len(report.annealed_path_slack) == 3
        assert all(len(row) == 3 for row in report.truncation_slack)
        assert report.annealed_path_ok
        assert report.truncation_ok
        assert report.passed

    def test_levels_sorted(self):
        report = pathwise_bound_check(PRESETS["exp1c"], 0.5, 5, 2, replicas=2, seed=1, levels=(4.0, 1.0))
        assert report.levels == [1.0, 4.0]
        assert report.to_dict()["levels"] == [1.0, 4.0]

    def test_truncation_monotone_ignores_low_levels(self):
        report = fenergy.PathwiseReport(1.0, 5, 1, [0.1, 2.0, 4.0], median_abs_eta=0.5)
        report.truncation_gaps = [[0.0, 0.3, 0.1]]
        assert report.truncation_monotone
        report.truncation_gaps = [[0.0, 0.1, 0.3]]
        assert not report.truncation_monotone


class TestGapScan:
    def test_rows(self):
        scan = gap_scan(GAUSS, [0.0, 0.5, 1.0], 10, 1, replicas=4, seed=2)
        rows = scan.rows()
        assert [row["beta"] for row in rows] == [0.0, 0.5, 1.0]
        assert rows[0]["gap"] == 0.0
        assert scan.lambdas[1] == pytest.approx(0.125)
        assert set(scan.to_dict()) == {"rows", "beta_c_bracket", "gap_nonincreasing"}

    @pytest.mark.parametrize(
        ("spec", "grid"),
        [("gauss", []), ("gauss", [0.5, 0.2]), ("gauss", [0.5, 0.5]), ("gauss", [-0.1, 0.5]), ("exp1", [0.5, 1.0])],
    )
    def test_grid_errors(self, spec, grid):
        with pytest.raises(GridError):
            gap_scan(PRESETS[spec], grid, 5, 1, replicas=2, seed=0)


class TestDecConditions:
    def test_infinite_ratio_is_enough(self):
        report = lemma_dec_conditions(PRESETS["exp1"], 1)
        assert report.condition_radius
        assert report.verdict == VERDICT_GUARANTEED

    def test_percolation_condition(self):
        report = lemma_dec_conditions(PRESETS["bern04"], 1)
        assert report.atom_at_top == pytest.approx(0.4)
        assert report.condition_percolation
        assert not report.condition_radius
        assert report.to_dict()["verdict"] == VERDICT_GUARANTEED

    def test_large_top_atom(self):
        report = lemma_dec_conditions(PRESETS["bern09"], 2)
        assert not report.condition_percolation
        assert report.verdict == VERDICT_INCONCLUSIVE

    def test_unbounded_law_has_no_top_atom(self):
        report = lemma_dec_conditions(GAUSS, 2)
        assert report.atom_at_top == 0.0
        assert report.condition_percolation
        assert not report.condition_radius
        assert report.alpha_upper is None
        assert report.verdict == VERDICT_GUARANTEED

    def test_alpha_spec_must_match(self):
        alpha = estimate_alpha(GAUSS, [5], 1, replicas=2, seed=0)
        with pytest.raises(SpecMismatchError):
            lemma_dec_conditions(GAUSS, 2, alpha)


class TestMartingale:
    def test_zero_beta(self):
        trace = martingale_diagnostic(GAUSS, 0.0, 0.1, 0.5, 6, 1, 100, seed=0)
        assert trace.n == 6
        assert trace.m_over_n == [0.0] * 6
        assert trace.n_over_n == [0.0] * 6
        assert trace.mc_error == [0.0] * 6

    def test_rows(self):
        trace = martingale_diagnostic(GAUSS, 0.5, 0.2, 0.5, 5, 1, 100, seed=1)
        rows = trace.rows()
        assert [row["j"] for row in rows] == [1, 2, 3, 4, 5]
        assert set(rows[0]) == {"j", "M_over_n", "N_over_n", "mc_error", "evAd"}
        assert all(err >= 0 for err in trace.mc_error)

    def test_sample_floor(self):
        with pytest.raises(ValueError, match="mc_layer_samples"):
            martingale_diagnostic(GAUSS, 0.5, 0.2, 0.5, 5, 1, 99, seed=1)

    def test_first_step_is_centered(self):
        # eps above 1/2 leaves the two-site first slice without atoms, so the step lands in M.
        firsts = []
        for replica in range(64):
            trace = martingale_diagnostic(GAUSS, 1.0, 0.6, 0.5, 1, 1, 100, seed=11, replica_id=replica)
            assert trace.n_over_n == [0.0]
            firsts.append(trace.m_over_n[0])
        values = np.array(firsts)
        assert abs(values.mean()) <= 3 * values.std(ddof=1) / math.sqrt(values.shape[0])

    def test_extra_observer_shares_the_run(self):
        seen: list[int] = []
        plain = martingale_diagnostic(GAUSS, 0.5, 0.2, 0.5, 4, 1, 100, seed=1)
        watched = martingale_diagnostic(
            GAUSS, 0.5, 0.2, 0.5, 4, 1, 100, seed=1, observer=lambda j, nu, rho, inc: seen.append(j)
        )
        assert seen == [1, 2, 3, 4]
        assert watched.m_over_n == plain.m_over_n
        assert watched.n_over_n == plain.n_over_n


class TestLocalizationBound:
    def test_values(self):
        bound = localization_bound(GAUSS, 0.5, 0.5, 2, alpha=1.0, m=4000, seed=1, p=0.1)
        assert bound.eps == pytest.approx(0.25)
        assert bound.numerator == pytest.approx(0.5)
        assert bound.denominator > 0
        assert bound.bound_alpha == pytest.approx(0.5 / bound.denominator)
        assert bound.bound_p == pytest.approx(0.1 / bound.denominator)

    def test_without_p(self):
        bound = localization_bound(GAUSS, 0.5, 0.5, 1, alpha=1.0, m=100, seed=1)
        assert bound.bound_p is None
        assert set(bound.to_dict()) >= {"bound_alpha", "bound_p", "denominator_stderr"}

    @pytest.mark.parametrize(("delta", "c"), [(0.5, 0), (0.0, 2), (1.0, 2)])
    def test_parameter_range(self, delta, c):
        with pytest.raises(ValueError):
            localization_bound(GAUSS, 0.5, delta, c, alpha=1.0, m=10, seed=0)
