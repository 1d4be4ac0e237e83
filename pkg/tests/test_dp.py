"""Tests for polylab.dp (polymer recursion, path maxima and the enumeration oracle)."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polylab import dp, exceptions
from polylab.env import PRESETS, EnvField, EnvSpec, TabulatedField, sample_eta


def _worked_field() -> TabulatedField:
    return TabulatedField({(1, (1,)): math.log(2.0)})


class TestBudget:
    @pytest.mark.parametrize("n", [1, 2, 7, 50])
    def test_cone_size_low_dimensions(self, n):
        assert dp.cone_size(n, 1) == n + 1
        assert dp.cone_size(n, 2) == (n + 1) ** 2

    def test_cone_size_three_dimensions(self):
        assert dp.cone_size(0, 3) == 1
        assert dp.cone_size(1, 3) == 6
        assert dp.cone_size(2, 3) == 19

    def test_cone_size_matches_support(self):
        state = dp.evolve(EnvField(PRESETS["gauss"], 1), 0.5, 5, 3)
        assert len(state.rho) == dp.cone_size(5, 3)

    def test_estimate_bytes(self):
        assert dp.estimate_bytes(9, 1) == 10 * 6 * 8

    def test_horizon_over_budget(self):
        with pytest.raises(exceptions.BudgetError, match="memory budget") as info:
            dp.check_budget(10_000, 3)
        assert info.value.parameter == "n"

    def test_dimension_unsupported(self):
        with pytest.raises(exceptions.BudgetError) as info:
            dp.check_budget(10, 4)
        assert info.value.parameter == "d"

    def test_custom_budget(self):
        dp.check_budget(100, 1, memory_budget=dp.estimate_bytes(100, 1))
        with pytest.raises(exceptions.BudgetError):
            dp.check_budget(100, 1, memory_budget=dp.estimate_bytes(100, 1) - 1)

    def test_evolve_checks_budget(self):
        with pytest.raises(exceptions.BudgetError):
            dp.evolve(EnvField(PRESETS["gauss"], 1), 1.0, 100, 2, memory_budget=1024)

    def test_horizon_must_be_positive(self):
        with pytest.raises(ValueError, match="horizon"):
            dp.check_budget(0, 1)


class TestWorkedExample:
    def test_log_partition_function(self):
        state = dp.evolve(_worked_field(), 1.0, 2, 1)
        assert state.log_z == pytest.approx(math.log(1.5), abs=1e-12)
        assert state.step_increments[1] == pytest.approx(0.0, abs=1e-15)

    def test_endpoint_law_after_first_step(self):
        seen = {}

        def keep(j, nu, rho, increment):
            seen[j] = (nu.to_dict(), rho.to_dict())

        dp.evolve(_worked_field(), 1.0, 2, 1, keep)
        nu1, rho1 = seen[1]
        assert nu1 == pytest.approx({(-1,): 0.5, (1,): 0.5})
        assert rho1 == pytest.approx({(-1,): 1 / 3, (1,): 2 / 3}, abs=1e-12)

    def test_predictive_law_at_zero_beta(self):
        state = dp.evolve(EnvField(PRESETS["gauss"], 4), 0.0, 2, 1)
        assert state.nu.to_dict() == pytest.approx({(-2,): 0.25, (0,): 0.5, (2,): 0.25}, abs=1e-15)

    def test_truncated(self):
        state = dp.truncated_evolve(_worked_field(), 1.0, 2, 1, 0.5)
        expected = math.log((2 + 2 * math.exp(0.5)) / 4)
        assert state.log_z == pytest.approx(expected, abs=1e-12)

    def test_max_path_energy(self):
        stats = dp.max_path_energy(_worked_field(), 2, 1, track_path=True)
        assert stats.max_energy == pytest.approx(math.log(2.0))
        assert stats.path[0] == (1,)


class TestEvolve:
    def test_zero_beta_is_exact(self):
        state = dp.evolve(EnvField(PRESETS["pareto4"], 2), 0.0, 40, 2)
        assert state.log_z == 0.0
        assert state.step_increments == [0.0] * 40

    def test_degenerate_environment(self):
        state = dp.evolve(EnvField(EnvSpec.degenerate(0.3), 0), 2.0, 25, 2)
        assert state.log_z == pytest.approx(2.0 * 0.3 * 25, abs=1e-10)

    def test_slices_are_normalized(self):
        def check(j, nu, rho, increment):
            assert nu.total_mass() == pytest.approx(1.0, abs=1e-12)
            assert rho.total_mass() == pytest.approx(1.0, abs=1e-12)
            assert nu.geometry_ok()
            assert rho.geometry_ok()

        dp.evolve(EnvField(PRESETS["exp1"], 8), 0.9, 20, 2, check)

    def test_telescoping(self):
        state = dp.evolve(EnvField(PRESETS["gauss"], 6), 1.3, 60, 1)
        assert state.telescoping_defect() < 1e-9

    def test_reproducible(self):
        a = dp.evolve(EnvField(PRESETS["bern04"], 12, 3), 1.0, 30, 2)
        b = dp.evolve(EnvField(PRESETS["bern04"], 12, 3), 1.0, 30, 2)
        assert a.log_z == b.log_z
        assert np.array_equal(a.rho.log_values, b.rho.log_values)

    def test_bounded_by_annealed(self):
        # Jensen per path average: ln Z_n <= beta * N(n)
        field = EnvField(PRESETS["gauss"], 21)
        log_z = dp.evolve(field, 0.8, 30, 1).log_z
        assert log_z <= 0.8 * dp.max_path_energy(field, 30, 1).max_energy + 1e-9

    @pytest.mark.parametrize("beta", [-1.0, math.inf, math.nan])
    def test_invalid_beta(self, beta):
        with pytest.raises(ValueError, match="beta"):
            dp.evolve(EnvField(PRESETS["gauss"], 0), beta, 3, 1)

    def test_invalid_truncation(self):
        with pytest.raises(ValueError, match="truncation"):
            dp.evolve(EnvField(PRESETS["gauss"], 0), 1.0, 3, 1, truncation=0.0)

    def test_non_finite_weight(self):
        field = TabulatedField({(2, (0,)): math.inf})
        with pytest.raises(exceptions.LogWeightOverflowError, match="j=2"):
            dp.evolve(field, 1.0, 3, 1)
        assert issubclass(exceptions.LogWeightOverflowError, exceptions.PolylabError)
        assert not issubclass(exceptions.LogWeightOverflowError, OverflowError)

    def test_truncation_tames_infinite_weight(self):
        field = TabulatedField({(2, (0,)): math.inf})
        state = dp.truncated_evolve(field, 1.0, 3, 1, 2.0)
        assert math.isfinite(state.log_z)

    def test_infinite_level_is_plain_recursion(self):
        field = EnvField(PRESETS["exp1c"], 5)
        plain = dp.evolve(field, 0.7, 25, 2)
        assert dp.truncated_evolve(field, 0.7, 25, 2, math.inf).log_z == plain.log_z

    @settings(max_examples=25, deadline=None)
    @given(
        seed=st.integers(min_value=0, max_value=2**32),
        beta=st.floats(min_value=0.0, max_value=3.0),
        d=st.integers(min_value=1, max_value=3),
        n=st.integers(min_value=1, max_value=12),
    )
    def test_final_slices_are_probability_laws(self, seed, beta, d, n):
        state = dp.evolve(EnvField(PRESETS["gauss"], seed), beta, n, d)
        assert state.nu.total_mass() == pytest.approx(1.0, abs=1e-12)
        assert state.rho.total_mass() == pytest.approx(1.0, abs=1e-12)
        assert state.rho.geometry_ok()


class TestMaxPathEnergy:
    def test_path_is_oriented_and_attains_maximum(self):
        field = EnvField(PRESETS["gauss"], 14)
        stats = dp.max_path_energy(field, 15, 2, track_path=True)
        assert len(stats.path) == 15
        previous = (0, 0)
        for site in stats.path:
            assert sum(abs(a - b) for a, b in zip(site, previous)) == 1
            previous = site
        energy = math.fsum(sample_eta(field, j, site) for j, site in enumerate(stats.path, start=1))
        assert energy == pytest.approx(stats.max_energy, abs=1e-12)

    def test_record_at(self):
        field = EnvField(PRESETS["exp1"], 2)
        stats = dp.max_path_energy(field, 20, 1, record_at=[5, 10, 20])
        assert set(stats.max_by_n) == {5, 10, 20}
        assert stats.max_by_n[20] == stats.max_energy
        assert stats.max_by_n[5] == pytest.approx(dp.max_path_energy(field, 5, 1).max_energy, abs=1e-12)

    def test_record_at_out_of_range(self):
        with pytest.raises(ValueError, match="record_at"):
            dp.max_path_energy(EnvField(PRESETS["gauss"], 0), 5, 1, record_at=[6])

    def test_excess_transform(self):
        field = TabulatedField({(1, (1,)): 3.0, (2, (0,)): -2.5})
        stats = dp.max_path_energy(field, 2, 1, dp.excess_over(1.0))
        assert stats.max_energy == pytest.approx(2.0 + 1.5)

    def test_transforms(self):
        eta = np.array([-3.0, -0.5, 0.0, 2.0])
        assert dp.excess_over(1.0)(eta).tolist() == [2.0, 0.0, 0.0, 1.0]
        assert dp.clamp(1.0)(eta).tolist() == [-1.0, -0.5, 0.0, 1.0]
        assert dp.identity(eta) is eta

    def test_non_finite_transform(self):
        with pytest.raises(exceptions.LogWeightOverflowError):
            dp.max_path_energy(EnvField(PRESETS["gauss"], 0), 3, 1, lambda eta: eta / 0.0)


class TestOracle:
    @pytest.mark.parametrize(
        ("spec", "d", "n"),
        [("gauss", 1, 10), ("exp1c", 1, 7), ("bern04", 2, 6), ("unif", 2, 8), ("pareto4", 3, 4)],
    )
    def test_recursion_matches_enumeration(self, spec, d, n):
        field = EnvField(PRESETS[spec], 31)
        beta = 0.6
        nus: list[dict] = []
        state = dp.evolve(field, beta, n, d, lambda j, nu, rho, inc: nus.append(nu.to_dict()))
        oracle = dp.brute_force_oracle(field, beta, n, d)

        assert state.log_z == pytest.approx(oracle.log_z, abs=1e-10)
        for got, want in zip(nus, oracle.nu):
            assert set(got) == set(want)
            for site, mass in want.items():
                assert got[site] == pytest.approx(mass, abs=1e-12)
        assert dp.max_path_energy(field, n, d).max_energy == oracle.max_energy

    def test_truncated_matches_enumeration(self):
        field = EnvField(PRESETS["gauss"], 8)
        state = dp.truncated_evolve(field, 1.5, 9, 1, 0.75)
        oracle = dp.brute_force_oracle(field, 1.5, 9, 1, truncation=0.75)
        assert state.log_z == pytest.approx(oracle.log_z, abs=1e-10)

    def test_zero_beta(self):
        oracle = dp.brute_force_oracle(EnvField(PRESETS["gauss"], 8), 0.0, 3, 1)
        assert oracle.log_z == 0.0
        assert oracle.nu[1] == pytest.approx({(-2,): 0.25, (0,): 0.5, (2,): 0.25})

    def test_worked_example(self):
        oracle = dp.brute_force_oracle(_worked_field(), 1.0, 2, 1)
        assert oracle.log_z == pytest.approx(math.log(1.5))
        assert oracle.max_energy == pytest.approx(math.log(2.0))

    def test_horizon_cap(self):
        with pytest.raises(exceptions.BudgetError, match="horizon"):
            dp.brute_force_oracle(EnvField(PRESETS["gauss"], 0), 1.0, dp.ORACLE_MAX_N + 1, 1)

    def test_path_count_cap(self):
        with pytest.raises(exceptions.BudgetError, match="paths"):
            dp.brute_force_oracle(EnvField(PRESETS["gauss"], 0), 1.0, 9, 2)
