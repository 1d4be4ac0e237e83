"""Free energy estimation and the inequalities around it.

Estimators run one independent environment replica per worker task and
reduce in replica order, so every number is reproducible for any thread
count. Reusing a seed across calls reuses the same environments (common
random numbers), which is what makes paired comparisons across ``beta`` or
``n`` meaningful.

Usage::

    spec = EnvSpec.gaussian()
    p = estimate_p(spec, beta=1.0, n=500, d=1, replicas=32, seed=1)
    a = estimate_alpha(spec, [125, 250, 500], d=1, replicas=32, seed=1)
    bound_check(p, a).passed
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import logsumexp

from polylab import dp
from polylab.atoms import atom_report
from polylab.env import (
    EnvField,
    EnvSpec,
    atom_at_esssup,
    lambda_over_radius,
    log_mgf,
    mean,
    mgf_radius,
)
from polylab.exceptions import GridError, SpecMismatchError
from polylab.hooks import ObserverChain, StepObserver
from polylab.percolation import DEFAULT_PC, PcEstimate
from polylab.pool import ReplicaPool
from polylab.simplex import SampleBank, SimplexPoint, mc_objective
from polylab.types import LatticeSlice

logger = logging.getLogger(__name__)

__all__ = [
    "FreeEnergyEstimate",
    "AlphaEstimate",
    "BoundReport",
    "PhaseScan",
    "DecConditionReport",
    "MartingaleTrace",
    "SuperadditivityReport",
    "PathwiseReport",
    "LocalizationBound",
    "estimate_p",
    "estimate_alpha",
    "bound_check",
    "gap_scan",
    "lemma_dec_conditions",
    "martingale_diagnostic",
    "check_superadditive",
    "pathwise_bound_check",
    "localization_bound",
    "VERDICT_GUARANTEED",
    "VERDICT_INCONCLUSIVE",
]

VERDICT_GUARANTEED = "β_c < R guaranteed"
VERDICT_INCONCLUSIVE = "inconclusive"
PATHWISE_SLACK = 1e-9


def _mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape[0] < 2 or np.ptp(arr) == 0:
        return float(arr[0]), 0.0
    return math.fsum(arr) / arr.shape[0], float(arr.std(ddof=1) / math.sqrt(arr.shape[0]))


# ---------------------------------------------------------------------------
# Estimates
# ---------------------------------------------------------------------------


@dataclass
class FreeEnergyEstimate:
    """Replica average of ``ln Z_n / n``.

    Attributes
    ----------
    values:
        Per-replica ``ln Z_n / n`` in replica order.
    """

    spec: EnvSpec
    beta: float
    n: int
    d: int
    replicas: int
    seed: int
    mean: float
    stderr: float
    values: list[float] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "beta": self.beta,
            "n": self.n,
            "d": self.d,
            "replicas": self.replicas,
            "seed": self.seed,
            "p_hat": self.mean,
            "stderr": self.stderr,
        }


def estimate_p(
    spec: EnvSpec,
    beta: float,
    n: int,
    d: int,
    replicas: int,
    seed: int,
    *,
    threads: int = 1,
    memory_budget: int = dp.DEFAULT_MEMORY_BUDGET,
) -> FreeEnergyEstimate:
    """Estimate ``p(beta)`` by ``Q(ln Z_n)/n`` over replicas ``0..replicas-1``."""
    if replicas < 2:
        raise ValueError(f"replicas must be >= 2, got {replicas}")
    dp.check_budget(n, d, memory_budget)

    def run(replica: int) -> float:
        field_ = EnvField(spec, seed, replica)
        return dp.evolve(field_, beta, n, d, memory_budget=memory_budget).log_z / n

    if spec.is_degenerate:
        # Every path carries beta*c per step.
        values = [log_mgf(spec, beta)] * replicas
    else:
        values = ReplicaPool(threads).map(run, range(replicas))
    avg, stderr = _mean_stderr(values)
    logger.info("p(%g) ~ %.6g +- %.2g  [%s, n=%d, d=%d, replicas=%d]", beta, avg, stderr, spec, n, d, replicas)
    return FreeEnergyEstimate(spec, beta, n, d, replicas, seed, avg, stderr, list(values))


@dataclass
class AlphaEstimate:
    """Replica averages of ``N(n)/n`` for each horizon of one sweep.

    Finite-``n`` means sit below ``alpha = sup_n Q(N(n))/n``; ``biased_low``
    records that the final estimate is a lower proxy.
    """

    spec: EnvSpec
    d: int
    replicas: int
    seed: int
    n_list: list[int]
    means: list[float]
    stderrs: list[float]
    values: list[list[float]] = field(default_factory=list)
    biased_low: bool = True

    @property
    def n(self) -> int:
        return self.n_list[-1]

    @property
    def mean(self) -> float:
        return self.means[-1]

    @property
    def stderr(self) -> float:
        return self.stderrs[-1]

    @property
    def upper(self) -> float:
        return self.mean + 2.0 * self.stderr

    def nondecreasing(self, k: float = 2.0) -> bool:
        """Means nondecreasing in ``n`` up to ``k`` pooled standard errors."""
        return all(
            self.means[i + 1] >= self.means[i] - k * math.hypot(self.stderrs[i], self.stderrs[i + 1])
            for i in range(len(self.means) - 1)
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "d": self.d,
            "replicas": self.replicas,
            "seed": self.seed,
            "n_list": self.n_list,
            "means": self.means,
            "stderrs": self.stderrs,
            "alpha_hat": self.mean,
            "stderr": self.stderr,
            "biased_low": self.biased_low,
        }


def estimate_alpha(
    spec: EnvSpec,
    n_list: Sequence[int],
    d: int,
    replicas: int,
    seed: int,
    *,
    threads: int = 1,
    memory_budget: int = dp.DEFAULT_MEMORY_BUDGET,
) -> AlphaEstimate:
    """Estimate ``alpha`` from one max-plus sweep per replica."""
    horizons = list(n_list)
    if not horizons or horizons != sorted(set(horizons)) or horizons[0] < 1:
        raise ValueError(f"n_list must be increasing positive integers, got {horizons}")
    if replicas < 2:
        raise ValueError(f"replicas must be >= 2, got {replicas}")

    def run(replica: int) -> list[float]:
        stats = dp.max_path_energy(
            EnvField(spec, seed, replica),
            horizons[-1],
            d,
            record_at=horizons,
            memory_budget=memory_budget,
        )
        return [stats.max_by_n[m] / m for m in horizons]

    per_replica = ReplicaPool(threads).map(run, range(replicas))
    columns = list(zip(*per_replica))
    means, stderrs = zip(*(_mean_stderr(col) for col in columns))
    estimate = AlphaEstimate(
        spec, d, replicas, seed, horizons, list(means), list(stderrs), [list(r) for r in per_replica]
    )
    if not estimate.nondecreasing():
        logger.warning("alpha means are not nondecreasing in n for %s, d=%d: %s", spec, d, estimate.means)
    return estimate


# ---------------------------------------------------------------------------
# Bounds
# ---------------------------------------------------------------------------


@dataclass
class BoundReport:
    """``p_hat <= min(beta * alpha_upper, lambda(beta))`` up to ``tolerance``."""

    beta: float
    p_hat: float
    p_stderr: float
    alpha_upper: float
    lam: float
    rhs: float
    tolerance: float
    passed: bool
    strictly_below_lambda: bool

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def bound_check(
    p_est: FreeEnergyEstimate, alpha_est: AlphaEstimate, lam: float | None = None
) -> BoundReport:
    """Check ``p <= alpha * beta wedge lambda`` using ``alpha_hat + 2 stderr``.

    ``strictly_below_lambda`` reports ``p_hat < lambda - 2 stderr``.

    Raises
    ------
    SpecMismatchError
        If the estimates were made for different laws or dimensions.
    """
    if p_est.spec != alpha_est.spec or p_est.d != alpha_est.d:
        raise SpecMismatchError(
            f"p estimate for {p_est.spec}, d={p_est.d} vs alpha estimate for "
            f"{alpha_est.spec}, d={alpha_est.d}"
        )
    beta = p_est.beta
    if lam is None:
        lam = log_mgf(p_est.spec, beta)
    alpha_upper = alpha_est.upper
    rhs = min(beta * alpha_upper, lam)
    tolerance = 2.0 * math.hypot(p_est.stderr, beta * alpha_est.stderr)
    passed = p_est.mean <= rhs + tolerance + 1e-12
    strict = p_est.mean < lam - 2.0 * p_est.stderr
    return BoundReport(beta, p_est.mean, p_est.stderr, alpha_upper, lam, rhs, tolerance, passed, strict)


@dataclass
class SuperadditivityReport:
    n1: int
    n2: int
    lhs: float
    rhs: float
    stderr: float
    passed: bool

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def check_superadditive(
    spec: EnvSpec,
    beta: float,
    n1: int,
    n2: int,
    d: int,
    replicas: int,
    seed: int,
    *,
    threads: int = 1,
) -> SuperadditivityReport:
    """``Q(ln Z_{n1+n2}) >= Q(ln Z_{n1}) + Q(ln Z_{n2})`` within 2 pooled stderr."""
    ests = [
        estimate_p(spec, beta, m, d, replicas, seed, threads=threads) for m in (n1, n2, n1 + n2)
    ]
    lhs = (n1 + n2) * ests[2].mean
    rhs = n1 * ests[0].mean + n2 * ests[1].mean
    stderr = math.sqrt(sum((e.n * e.stderr) ** 2 for e in ests))
    return SuperadditivityReport(n1, n2, lhs, rhs, stderr, lhs >= rhs - 2.0 * stderr - 1e-12)


@dataclass
class PathwiseReport:
    """Per-replica pathwise inequalities.

    Attributes
    ----------
    annealed_path_slack:
        ``beta * N(n) - ln Z_n`` per replica; must be >= ``-1e-9``.
    truncation_slack:
        ``beta * N_L(n) - |ln Z_n - ln Z_{n,L}|`` per replica and level, where
        ``N_L`` uses the weight ``(|eta| - L)_+``.
    truncation_gaps:
        ``|ln Z_n - ln Z_{n,L}|`` per replica and level.
    """

    beta: float
    n: int
    d: int
    levels: list[float]
    median_abs_eta: float
    annealed_path_slack: list[float] = field(default_factory=list)
    truncation_slack: list[list[float]] = field(default_factory=list)
    truncation_gaps: list[list[float]] = field(default_factory=list)

    @property
    def annealed_path_ok(self) -> bool:
        return all(s >= -PATHWISE_SLACK for s in self.annealed_path_slack)

    @property
    def truncation_ok(self) -> bool:
        return all(s >= -PATHWISE_SLACK for row in self.truncation_slack for s in row)

    @property
    def truncation_monotone(self) -> bool:
        """Gaps nonincreasing in ``L`` over the levels above the median ``|eta|``."""
        tail = [i for i, level in enumerate(self.levels) if level > self.median_abs_eta]
        return all(
            row[b] <= row[a] + PATHWISE_SLACK
            for row in self.truncation_gaps
            for a, b in zip(tail, tail[1:])
        )

    @property
    def passed(self) -> bool:
        return self.annealed_path_ok and self.truncation_ok

    def to_dict(self) -> dict[str, Any]:
        return {
            "beta": self.beta,
            "n": self.n,
            "d": self.d,
            "levels": self.levels,
            "min_annealed_path_slack": min(self.annealed_path_slack),
            "min_truncation_slack": min(s for row in self.truncation_slack for s in row),
            "truncation_monotone": self.truncation_monotone,
            "passed": self.passed,
        }


def _median_abs_eta(spec: EnvSpec, points: int = 4096) -> float:
    u = (np.arange(points) + 0.5) / points
    return float(np.median(np.abs(spec.quantile(u))))


def pathwise_bound_check(
    spec: EnvSpec,
    beta: float,
    n: int,
    d: int,
    replicas: int,
    seed: int,
    *,
    levels: Sequence[float] = (0.5, 1.0, 2.0, 4.0, 8.0),
    threads: int = 1,
) -> PathwiseReport:
    """Check ``ln Z_n <= beta N(n)`` and the truncation estimate on every replica."""
    levels = sorted(levels)

    def run(replica: int) -> tuple[float, list[float], list[float]]:
        field_ = EnvField(spec, seed, replica)
        log_z = dp.evolve(field_, beta, n, d).log_z
        slack = beta * dp.max_path_energy(field_, n, d).max_energy - log_z
        trunc_slack, gaps = [], []
        for level in levels:
            gap = abs(log_z - dp.truncated_evolve(field_, beta, n, d, level).log_z)
            excess = dp.max_path_energy(field_, n, d, dp.excess_over(level)).max_energy
            gaps.append(gap)
            trunc_slack.append(beta * excess - gap)
        return slack, trunc_slack, gaps

    report = PathwiseReport(beta, n, d, list(levels), _median_abs_eta(spec))
    for slack, trunc_slack, gaps in ReplicaPool(threads).map(run, range(replicas)):
        report.annealed_path_slack.append(slack)
        report.truncation_slack.append(trunc_slack)
        report.truncation_gaps.append(gaps)
    return report


# ---------------------------------------------------------------------------
# Phase scan
# ---------------------------------------------------------------------------


@dataclass
class PhaseScan:
    """Quenched-annealed gap ``p_hat - lambda`` along a beta grid.

    ``beta_c_bracket`` is the grid cell where ``|gap|`` first exceeds
    ``2 stderr``; it is evidence of where ``beta_c`` lies, not a proof.
    """

    beta_grid: list[float]
    estimates: list[FreeEnergyEstimate]
    lambdas: list[float]
    gaps: list[float]
    stderrs: list[float]
    beta_c_bracket: tuple[float, float] | None = None

    def paired_stderr(self, i: int) -> float:
        """Standard error of ``gap[i+1] - gap[i]`` from replica-paired values."""
        a = np.asarray(self.estimates[i].values)
        b = np.asarray(self.estimates[i + 1].values)
        return _mean_stderr(b - a)[1]

    def gap_nonincreasing(self, k: float = 2.0) -> bool:
        return all(
            self.gaps[i + 1] <= self.gaps[i] + k * self.paired_stderr(i) + 1e-12
            for i in range(len(self.gaps) - 1)
        )

    def rows(self) -> list[dict[str, Any]]:
        return [
            {"beta": b, "p_hat": e.mean, "stderr": e.stderr, "lambda": lam, "gap": g}
            for b, e, lam, g in zip(self.beta_grid, self.estimates, self.lambdas, self.gaps)
        ]

    def to_dict(self) -> dict[str, Any]:
        return {
            "rows": self.rows(),
            "beta_c_bracket": list(self.beta_c_bracket) if self.beta_c_bracket else None,
            "gap_nonincreasing": self.gap_nonincreasing(),
        }


def gap_scan(
    spec: EnvSpec,
    beta_grid: Sequence[float],
    n: int,
    d: int,
    replicas: int,
    seed: int,
    *,
    threads: int = 1,
) -> PhaseScan:
    """Estimate ``p - lambda`` on ``beta_grid`` with shared replica seeds.

    Raises
    ------
    GridError
        If the grid is not strictly increasing, starts below 0 or reaches ``R``.
    """
    grid = [float(b) for b in beta_grid]
    radius = mgf_radius(spec)
    if not grid:
        raise GridError("beta grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise GridError(f"beta grid must be strictly increasing, got {grid}")
    if grid[0] < 0 or grid[-1] >= radius:
        raise GridError(f"beta grid must lie in [0, R={radius}), got {grid}")

    estimates = [estimate_p(spec, b, n, d, replicas, seed, threads=threads) for b in grid]
    lambdas = [log_mgf(spec, b) for b in grid]
    gaps = [e.mean - lam for e, lam in zip(estimates, lambdas)]
    stderrs = [e.stderr for e in estimates]

    bracket = None
    for i, (gap, se) in enumerate(zip(gaps, stderrs)):
        if abs(gap) > 2.0 * se + 1e-9:
            bracket = (grid[i - 1] if i else 0.0, grid[i])
            break
    return PhaseScan(grid, estimates, lambdas, gaps, stderrs, bracket)


@dataclass
class DecConditionReport:
    """Which sufficient condition for ``beta_c < R`` holds.

    Attributes
    ----------
    condition_radius:
        ``R < inf`` and ``alpha < lambda(R)/R`` (with ``alpha_hat + 2 stderr``).
    condition_percolation:
        ``Q(eta = esssup) < p_c(d)`` with the ``p_c`` uncertainty subtracted.
    """

    d: int
    R: float
    lambda_over_R: float
    alpha_upper: float | None
    atom_at_top: float
    pc: PcEstimate
    condition_radius: bool
    condition_percolation: bool

    @property
    def verdict(self) -> str:
        if self.condition_radius or self.condition_percolation:
            return VERDICT_GUARANTEED
        return VERDICT_INCONCLUSIVE

    def to_dict(self) -> dict[str, Any]:
        return {
            "d": self.d,
            "R": self.R,
            "lambda_over_R": self.lambda_over_R,
            "alpha_upper": self.alpha_upper,
            "atom_at_top": self.atom_at_top,
            "pc": self.pc.to_dict(),
            "condition_radius": self.condition_radius,
            "condition_percolation": self.condition_percolation,
            "verdict": self.verdict,
        }


def lemma_dec_conditions(
    spec: EnvSpec,
    d: int,
    alpha_est: AlphaEstimate | None = None,
    *,
    pc: PcEstimate | None = None,
) -> DecConditionReport:
    """Evaluate both sufficient conditions for a nontrivial ``beta_c``.

    Without ``alpha_est`` the radius condition can only hold when
    ``lambda(R)/R`` is infinite.
    """
    if alpha_est is not None and (alpha_est.spec != spec or alpha_est.d != d):
        raise SpecMismatchError(f"alpha estimate is for {alpha_est.spec}, d={alpha_est.d}")
    pc = pc or DEFAULT_PC[d]
    radius = mgf_radius(spec)
    ratio = lambda_over_radius(spec)
    alpha_upper = alpha_est.upper if alpha_est is not None else None

    cond_radius = False
    if 0 < radius < math.inf:
        if math.isinf(ratio):
            cond_radius = True
        elif alpha_upper is not None:
            cond_radius = alpha_upper < ratio

    top_atom = atom_at_esssup(spec)
    # An unbounded law has no atom at its supremum.
    cond_perc = math.isinf(radius) and top_atom < pc.value - 2.0 * pc.stderr
    return DecConditionReport(d, radius, ratio, alpha_upper, top_atom, pc, cond_radius, cond_perc)


# ---------------------------------------------------------------------------
# Martingale diagnostic
# ---------------------------------------------------------------------------


@dataclass
class MartingaleTrace:
    """Running ``M_j/j`` and ``N_j/j``.

    ``M`` sums the centered increments on steps where the atom event
    ``A^{eps,delta}`` fails and ``N`` on steps where it holds. ``mc_error``
    is the propagated Monte Carlo error of ``(M_j + N_j)/j``.
    """

    beta: float
    eps: float
    delta: float
    m_over_n: list[float] = field(default_factory=list)
    n_over_n: list[float] = field(default_factory=list)
    mc_error: list[float] = field(default_factory=list)
    events: list[bool] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.m_over_n)

    def rows(self) -> list[dict[str, Any]]:
        return [
            {"j": j + 1, "M_over_n": m, "N_over_n": nn, "mc_error": err, "evAd": ev}
            for j, (m, nn, err, ev) in enumerate(
                zip(self.m_over_n, self.n_over_n, self.mc_error, self.events)
            )
        ]


class _MartingaleObserver:
    def __init__(self, field_: EnvField, beta: float, eps: float, delta: float, samples: int) -> None:
        self.field = field_
        self.beta = beta
        self.pairs = (samples + 1) // 2
        self.trace = MartingaleTrace(beta, eps, delta)
        self._m = 0.0
        self._n = 0.0
        self._var = 0.0

    def __call__(self, j: int, nu: LatticeSlice, rho: LatticeSlice, increment: float) -> None:
        report = atom_report(nu, self.trace.eps, self.trace.delta)
        if self.beta == 0:
            centered, err = 0.0, 0.0
        else:
            sites = nu.sites
            pair_means = np.empty(self.pairs)
            for k in range(self.pairs):
                plain = self.field.resample_layer(j, sites, k)
                twin = self.field.resample_layer(j, sites, k, antithetic=True)
                pair_means[k] = 0.5 * (
                    logsumexp(nu.log_values + self.beta * plain)
                    + logsumexp(nu.log_values + self.beta * twin)
                )
            conditional, err = _mean_stderr(pair_means)
            centered = increment - conditional
        if report.event_mass_ge_delta:
            self._n += centered
        else:
            self._m += centered
        self._var += err * err
        self.trace.m_over_n.append(self._m / j)
        self.trace.n_over_n.append(self._n / j)
        self.trace.mc_error.append(math.sqrt(self._var) / j)
        self.trace.events.append(report.event_mass_ge_delta)


def martingale_diagnostic(
    spec: EnvSpec,
    beta: float,
    eps: float,
    delta: float,
    n: int,
    d: int,
    mc_layer_samples: int,
    seed: int,
    *,
    replica_id: int = 0,
    observer: StepObserver | None = None,
) -> MartingaleTrace:
    """Track the martingales built from centered free energy increments.

    The increment at step ``j`` is ``ln sum_x nu_j(x) e^{beta eta(j,x)}``
    minus its conditional mean given the past, estimated with
    ``mc_layer_samples`` fresh layers drawn in antithetic pairs. ``observer``
    runs on the same recursion after the martingale update.
    """
    if mc_layer_samples < 100:
        raise ValueError(f"mc_layer_samples must be >= 100, got {mc_layer_samples}")
    field_ = EnvField(spec, seed, replica_id)
    martingale = _MartingaleObserver(field_, beta, eps, delta, mc_layer_samples)
    chain = ObserverChain().add(martingale)
    if observer is not None:
        chain.add(observer, priority=1)
    dp.evolve(field_, beta, n, d, chain)
    return martingale.trace


# ---------------------------------------------------------------------------
# Localization budget
# ---------------------------------------------------------------------------


@dataclass
class LocalizationBound:
    """Upper bound on the Cesaro frequency of the complement of ``A^{eps,delta}``.

    ``(alpha*beta - beta*E[eta]) / (E[ln((1-delta)/c sum_{k<=c} X_k + delta X_{c+1})]
    - beta*E[eta])`` with ``X = e^{beta eta}`` and ``eps = (1 - delta)/c``;
    ``bound_p`` replaces ``alpha*beta`` by ``p(beta)``.
    """

    beta: float
    delta: float
    c: int
    eps: float
    numerator: float
    denominator: float
    denominator_stderr: float
    bound_alpha: float
    bound_p: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def localization_bound(
    spec: EnvSpec,
    beta: float,
    delta: float,
    c: int,
    alpha: float,
    m: int,
    seed: int,
    *,
    p: float | None = None,
) -> LocalizationBound:
    if c < 1 or not 0 < delta < 1:
        raise ValueError(f"need c >= 1 and 0 < delta < 1, got c={c}, delta={delta}")
    eps = (1 - delta) / c
    bank = SampleBank.from_spec(spec, beta, m, c + 1, seed)
    point = SimplexPoint(np.array([(1 - delta) / c] * c + [delta]))
    value, stderr = mc_objective(point, bank)
    drift = beta * mean(spec)
    numerator = alpha * beta - drift
    denominator = value - drift
    bound = numerator / denominator if denominator > 0 else math.inf
    bound_p = None
    if p is not None:
        bound_p = (p - drift) / denominator if denominator > 0 else math.inf
    return LocalizationBound(beta, delta, c, eps, numerator, denominator, stderr, bound, bound_p)
