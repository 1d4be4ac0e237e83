"""Assertion suites over the whole package.

Each suite runs at pinned seeds and returns one :class:`Verdict` per
assertion. ``quick`` scale keeps every suite within seconds to a minute;
``full`` scale runs the acceptance sizes.

Usage::

    report = verify_suite("oracle", scale="quick")
    report.passed, [v.name for v in report.failed()]
"""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from polylab import dp, fenergy, simplex
from polylab.atoms import AtomTracker, FixedEps
from polylab.env import PRESETS, EnvField, EnvSpec, TabulatedField, log_mgf
from polylab.pool import ReplicaPool

logger = logging.getLogger(__name__)

__all__ = ["Verdict", "SuiteReport", "SUITES", "verify_suite"]

SUITE_SEED = 20240601
LOCALIZATION_FLOOR = 0.5


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


@dataclass
class SuiteReport:
    suite: str
    scale: str
    verdicts: list[Verdict] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def failed(self) -> list[Verdict]:
        return [v for v in self.verdicts if not v.passed]

    def to_dict(self) -> dict[str, Any]:
        return {
            "suite": self.suite,
            "scale": self.scale,
            "passed": self.passed,
            "seconds": round(self.seconds, 3),
            "verdicts": [v.to_dict() for v in self.verdicts],
        }


@dataclass(frozen=True)
class _Sizes:
    oracle_instances: int
    oracle_n: dict[int, int]
    pathwise_instances: int
    truncation_instances: int
    truncation_n: int
    annealed_n: dict[int, int]
    annealed_replicas: int
    gap_n: int
    gap_replicas: int
    lemma_m: int
    lemma_trials: int
    lemma_restarts: int
    utile_n_list: tuple[int, ...]
    localization_n: int
    localization_replicas: int
    martingale_n: tuple[int, int]
    martingale_replicas: int
    martingale_samples: int


_SCALES = {
    "quick": _Sizes(
        oracle_instances=10,
        oracle_n={1: 8, 2: 5},
        pathwise_instances=200,
        truncation_instances=20,
        truncation_n=30,
        annealed_n={1: 60, 2: 30, 3: 15},
        annealed_replicas=8,
        gap_n=200,
        gap_replicas=16,
        lemma_m=20_000,
        lemma_trials=40,
        lemma_restarts=3,
        utile_n_list=(10, 100),
        localization_n=200,
        localization_replicas=8,
        martingale_n=(20, 200),
        martingale_replicas=16,
        martingale_samples=100,
    ),
    "full": _Sizes(
        oracle_instances=100,
        oracle_n={1: 12, 2: 8},
        pathwise_instances=10_000,
        truncation_instances=200,
        truncation_n=100,
        annealed_n={1: 500, 2: 500, 3: 60},
        annealed_replicas=64,
        gap_n=1000,
        gap_replicas=64,
        lemma_m=100_000,
        lemma_trials=200,
        lemma_restarts=8,
        utile_n_list=(10, 100, 1000, 10_000),
        localization_n=1000,
        localization_replicas=32,
        martingale_n=(100, 1000),
        martingale_replicas=16,
        martingale_samples=100,
    ),
}

# Standing-condition-compliant laws used for random instances.
_INSTANCE_SPECS = ("gauss", "exp1", "exp1c", "pareto4", "bern04", "unif")


def _random_instance(rng: np.random.Generator, max_n: int) -> tuple[EnvSpec, float, int, int]:
    spec = PRESETS[_INSTANCE_SPECS[int(rng.integers(len(_INSTANCE_SPECS)))]]
    beta = float(rng.uniform(0.0, 2.0))
    n = int(rng.integers(1, max_n + 1))
    seed = int(rng.integers(0, 2**63))
    return spec, beta, n, seed


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


def _worked_example() -> Verdict:
    field_ = TabulatedField({(1, (1,)): math.log(2.0)})
    first: dict[tuple[int, ...], float] = {}

    def keep_first(j: int, nu: Any, rho: Any, increment: float) -> None:
        if j == 1:
            first.update(rho.to_dict())

    state = dp.evolve(field_, 1.0, 2, 1, keep_first)
    oracle = dp.brute_force_oracle(field_, 1.0, 2, 1)
    truncated = dp.truncated_evolve(field_, 1.0, 2, 1, 0.5)
    expected_trunc = math.log((2 + 2 * math.exp(0.5)) / 4)
    ok = (
        abs(state.log_z - math.log(1.5)) <= 1e-12
        and abs(oracle.log_z - math.log(1.5)) <= 1e-12
        and abs(first[(1,)] - 2 / 3) <= 1e-12
        and abs(truncated.log_z - expected_trunc) <= 1e-12
        and dp.max_path_energy(field_, 2, 1).max_energy == math.log(2.0)
    )
    return Verdict(
        "worked_example",
        ok,
        {"log_z": state.log_z, "oracle_log_z": oracle.log_z, "rho_1": first[(1,)]},
    )


def _oracle_equivalence(sizes: _Sizes, d: int) -> Verdict:
    rng = np.random.default_rng(SUITE_SEED + d)
    worst_z = worst_nu = worst_n = 0.0
    for _ in range(sizes.oracle_instances):
        spec, beta, n, seed = _random_instance(rng, sizes.oracle_n[d])
        field_ = EnvField(spec, seed)
        oracle = dp.brute_force_oracle(field_, beta, n, d)
        nus: dict[int, dict[tuple[int, ...], float]] = {}

        def keep(j: int, nu: Any, rho: Any, increment: float) -> None:
            nus[j] = nu.to_dict()

        state = dp.evolve(field_, beta, n, d, keep)
        worst_z = max(worst_z, abs(state.log_z - oracle.log_z))
        for j, expected in enumerate(oracle.nu, start=1):
            got = nus[j]
            for site in set(got) | set(expected):
                worst_nu = max(worst_nu, abs(got.get(site, 0.0) - expected.get(site, 0.0)))
        path = dp.max_path_energy(field_, n, d)
        worst_n = max(worst_n, abs(path.max_energy - oracle.max_energy))
    ok = worst_z <= 1e-10 and worst_nu <= 1e-12 and worst_n <= 1e-10
    return Verdict(
        f"oracle_equivalence_d{d}",
        ok,
        {"instances": sizes.oracle_instances, "max_log_z_err": worst_z, "max_nu_err": worst_nu, "max_path_err": worst_n},
    )


def _suite_oracle(sizes: _Sizes, threads: int) -> list[Verdict]:
    return [_worked_example(), _oracle_equivalence(sizes, 1), _oracle_equivalence(sizes, 2)]


# ---------------------------------------------------------------------------
# Bounds
# ---------------------------------------------------------------------------


def _annealed_path_bound(sizes: _Sizes) -> Verdict:
    rng = np.random.default_rng(SUITE_SEED + 10)
    worst = math.inf
    for i in range(sizes.pathwise_instances):
        spec, beta, n, seed = _random_instance(rng, 12)
        d = 1 + i % 2
        field_ = EnvField(spec, seed)
        slack = beta * dp.max_path_energy(field_, n, d).max_energy - dp.evolve(field_, beta, n, d).log_z
        worst = min(worst, slack)
    return Verdict(
        "annealed_path_bound",
        worst >= -fenergy.PATHWISE_SLACK,
        {"instances": sizes.pathwise_instances, "min_slack": worst},
    )


def _truncation(sizes: _Sizes, threads: int) -> list[Verdict]:
    verdicts = []
    for d, spec_name in ((1, "gauss"), (2, "exp1c")):
        n = sizes.truncation_n if d == 1 else max(sizes.truncation_n // 3, 5)
        report = fenergy.pathwise_bound_check(
            PRESETS[spec_name], 1.0, n, d, sizes.truncation_instances // 2, SUITE_SEED + 20 + d, threads=threads
        )
        verdicts.append(Verdict(f"truncation_estimate_d{d}", report.truncation_ok and report.annealed_path_ok, report.to_dict()))
        verdicts.append(Verdict(f"truncation_monotone_d{d}", report.truncation_monotone, {"levels": report.levels}))
    return verdicts


def _annealed_bound(sizes: _Sizes, threads: int) -> list[Verdict]:
    spec = EnvSpec.gaussian()
    verdicts = []
    for d, n in sizes.annealed_n.items():
        for beta in (0.5, 1.0):
            est = fenergy.estimate_p(spec, beta, n, d, sizes.annealed_replicas, SUITE_SEED + 30 + d, threads=threads)
            lam = log_mgf(spec, beta)
            verdicts.append(
                Verdict(
                    f"annealed_bound_d{d}_beta{beta:g}",
                    est.mean <= lam + 2 * est.stderr,
                    {"p_hat": est.mean, "stderr": est.stderr, "lambda": lam, "n": n},
                )
            )
    return verdicts


def _gap_monotone(sizes: _Sizes, threads: int) -> list[Verdict]:
    scan = fenergy.gap_scan(
        EnvSpec.gaussian(), [0.25, 0.5, 1.0, 2.0], sizes.gap_n, 1, sizes.gap_replicas, SUITE_SEED + 40, threads=threads
    )
    last_gap, last_se = scan.gaps[-1], scan.stderrs[-1]
    return [
        Verdict("gap_nonincreasing", scan.gap_nonincreasing(), scan.to_dict()),
        Verdict("gap_strict_at_beta2", last_gap < -2 * last_se, {"gap": last_gap, "stderr": last_se}),
    ]


def _superadditive(sizes: _Sizes, threads: int) -> Verdict:
    n = max(sizes.gap_n // 4, 10)
    report = fenergy.check_superadditive(
        EnvSpec.gaussian(), 1.0, n, n, 1, sizes.gap_replicas, SUITE_SEED + 50, threads=threads
    )
    return Verdict("superadditivity", report.passed, report.to_dict())


def _suite_bounds(sizes: _Sizes, threads: int) -> list[Verdict]:
    return [
        _annealed_path_bound(sizes),
        *_truncation(sizes, threads),
        *_annealed_bound(sizes, threads),
        *_gap_monotone(sizes, threads),
        _superadditive(sizes, threads),
    ]


# ---------------------------------------------------------------------------
# Lemmas
# ---------------------------------------------------------------------------


def _constraints() -> list[simplex.ConstraintSet]:
    out = []
    for eps, delta in ((0.1, 0.8), (0.05, 0.9)):
        sizing = simplex.ConstraintSet.atom_mass(eps, delta, n=10_000)
        out.append(simplex.ConstraintSet.atom_mass(eps, delta, n=2 * sizing.min_dimension))
    for k in (4, 10):
        out.append(simplex.ConstraintSet.cap(1 / k, n=2 * k))
    return out


def _minimizer_checks(sizes: _Sizes, threads: int) -> list[Verdict]:
    verdicts = []
    for spec_name in ("exp1c", "gauss"):
        for i, constraint in enumerate(_constraints()):
            bank = simplex.SampleBank.from_spec(
                PRESETS[spec_name], 1.0, sizes.lemma_m, constraint.n, SUITE_SEED + 60 + i
            )
            report = simplex.closed_form_optimality(constraint, bank, sizes.lemma_trials, seed=SUITE_SEED + i)
            verdicts.append(Verdict(f"closed_form_optimal_{spec_name}_{constraint}", report.passed, report.to_dict()))
            if spec_name == "exp1c":
                result = simplex.constrained_minimize(
                    constraint, bank, sizes.lemma_restarts, seed=SUITE_SEED + i, threads=threads
                )
                distance = simplex.l1_distance_up_to_permutation(
                    result.point, simplex.closed_form_minimizer(constraint)
                )
                verdicts.append(
                    Verdict(f"minimizer_near_closed_form_{constraint}", distance <= 0.05, {**result.to_dict(), "l1": distance})
                )
    return verdicts


def _utile(sizes: _Sizes) -> list[Verdict]:
    # Large n streams its rows through chunked regeneration at the same m.
    table = simplex.lemma_utile_check(
        EnvSpec.gaussian(), (0.5, 2.0), sizes.utile_n_list, sizes.lemma_m, SUITE_SEED + 70
    )
    rows = [row.to_dict() for row in table.rows]
    return [
        Verdict("averaged_moment_nondecreasing", table.nondecreasing(), {"rows": rows}),
        Verdict("averaged_moment_converged", table.converged(), {"target": table.target, "last": rows[-1]}),
    ]


def _suite_lemmas(sizes: _Sizes, threads: int) -> list[Verdict]:
    return [*_minimizer_checks(sizes, threads), *_utile(sizes)]


# ---------------------------------------------------------------------------
# Localization
# ---------------------------------------------------------------------------


def _localization_trend(sizes: _Sizes, threads: int) -> list[Verdict]:
    spec = EnvSpec.pareto(4.0)
    betas = (1.0, 2.0, 4.0, 8.0)
    n = sizes.localization_n

    def run(replica: int) -> list[float]:
        field_ = EnvField(spec, SUITE_SEED + 80, replica)
        masses = []
        for beta in betas:
            tracker = AtomTracker([FixedEps(0.05)], delta=0.5)
            dp.evolve(field_, beta, n, 1, tracker)
            masses.append(tracker.traces[0].atom_mass_mean)
        return masses

    table = np.array(ReplicaPool(threads).map(run, range(sizes.localization_replicas)))
    means = table.mean(axis=0)
    increasing = True
    for k in range(len(betas) - 1):
        diff = table[:, k + 1] - table[:, k]
        se = diff.std(ddof=1) / math.sqrt(diff.shape[0])
        increasing &= bool(diff.mean() > 2 * se)
    detail = {"betas": list(betas), "mean_atom_mass": means.tolist()}
    return [
        Verdict("atom_mass_increasing_in_beta", increasing, detail),
        Verdict("atom_mass_floor_at_beta8", bool(means[-1] >= LOCALIZATION_FLOOR), {"floor": LOCALIZATION_FLOOR, **detail}),
    ]


def _martingale_lln(sizes: _Sizes, threads: int) -> Verdict:
    early, late = sizes.martingale_n

    def run(replica: int) -> tuple[float, float, float, float]:
        trace = fenergy.martingale_diagnostic(
            EnvSpec.gaussian(), 2.0, 0.1, 0.5, late, 1, sizes.martingale_samples, SUITE_SEED + 90, replica_id=replica
        )
        # M collects the steps outside A and N the steps inside; together they cover every step.
        return (
            abs(trace.m_over_n[early - 1]) + abs(trace.n_over_n[early - 1]),
            abs(trace.m_over_n[late - 1]) + abs(trace.n_over_n[late - 1]),
            trace.mc_error[early - 1],
            trace.mc_error[late - 1],
        )

    table = np.array(ReplicaPool(threads).map(run, range(sizes.martingale_replicas)))
    k = table.shape[0]
    drop = table[:, 0] - table[:, 1]
    pooled = drop.std(ddof=1) / math.sqrt(k)
    mc = math.hypot(table[:, 2].mean(), table[:, 3].mean())
    error = math.hypot(pooled, mc)
    return Verdict(
        "martingale_lln",
        bool(drop.mean() > error),
        {
            "mean_abs_early": float(table[:, 0].mean()),
            "mean_abs_late": float(table[:, 1].mean()),
            "error": error,
            "n": [early, late],
            "replicas": k,
        },
    )


def _localization_budget(sizes: _Sizes) -> Verdict:
    spec = EnvSpec.gaussian()
    alpha = fenergy.estimate_alpha(spec, [50, 100], 1, 8, SUITE_SEED + 95)
    bound = fenergy.localization_bound(spec, 2.0, 0.6, 4, alpha.upper, sizes.lemma_m, SUITE_SEED + 96)
    return Verdict("localization_budget_finite", bound.denominator > 0, bound.to_dict())


def _suite_localization(sizes: _Sizes, threads: int) -> list[Verdict]:
    return [*_localization_trend(sizes, threads), _martingale_lln(sizes, threads), _localization_budget(sizes)]


SUITES: dict[str, Callable[[_Sizes, int], list[Verdict]]] = {
    "oracle": _suite_oracle,
    "bounds": _suite_bounds,
    "lemmas": _suite_lemmas,
    "localization": _suite_localization,
}


def verify_suite(name: str, *, scale: str = "quick", threads: int = 1) -> SuiteReport:
    """Run suite ``name`` (or ``all``) and collect verdicts."""
    if name != "all" and name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)} or 'all'")
    if scale not in _SCALES:
        raise ValueError(f"unknown scale {scale!r}")
    sizes = _SCALES[scale]
    names = list(SUITES) if name == "all" else [name]
    report = SuiteReport(name, scale)
    start = time.perf_counter()
    for suite in names:
        logger.info("running suite %s (%s)", suite, scale)
        report.verdicts.extend(SUITES[suite](sizes, threads))
    report.seconds = time.perf_counter() - start
    for verdict in report.failed():
        logger.warning("suite %s: %s failed: %s", name, verdict.name, verdict.detail)
    return report
