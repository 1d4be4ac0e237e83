"""Monte Carlo checks of the simplex optimization lemmas.

The objective is ``f(lambda) = E[ln sum_i lambda_i X_i]`` for i.i.d. positive
``X_i``. Two constraint sets are supported:

- ``atom_mass(eps, delta)``: ``sum_i lambda_i 1{lambda_i > eps} <= delta``,
  whose minimizer is ``(delta, eps, ..., eps, 0, ...)`` with
  ``(1 - delta) / eps`` copies of ``eps``;
- ``cap(eps)``: ``lambda_i <= eps = 1/k``, minimized by ``k`` copies of
  ``eps``.

Every comparison runs on one :class:`SampleBank` (common random numbers).
Samples are held as ``ln X`` so heavy tails never overflow.

Usage::

    constraint = ConstraintSet.atom_mass(eps=0.1, delta=0.8, n=6)
    bank = SampleBank.from_spec(EnvSpec.exponential(offset=1.0), beta=1.0,
                                m=100_000, width=6, seed=3)
    result = constrained_minimize(constraint, bank, restarts=8)
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import logsumexp

from polylab.env import EnvField, EnvSpec, log_mgf, mgf_radius
from polylab.exceptions import GridError, ProjectionError, SampleError
from polylab.pool import ReplicaPool

logger = logging.getLogger(__name__)

__all__ = [
    "SimplexPoint",
    "ConstraintKind",
    "ConstraintSet",
    "SampleBank",
    "MinimizeResult",
    "OptimalityReport",
    "UtileRow",
    "UtileTable",
    "mc_objective",
    "jensen_upper",
    "closed_form_minimizer",
    "project",
    "project_simplex",
    "random_feasible_point",
    "constrained_minimize",
    "closed_form_optimality",
    "transfer",
    "l1_distance_up_to_permutation",
    "lemma_utile_check",
]

SUM_TOLERANCE = 1e-12
# Rows of eta held at once by lemma_utile_check before it regenerates chunks.
MAX_BANK_CELLS = 20_000_000


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimplexPoint:
    """A probability vector ``lambda``."""

    lam: np.ndarray

    def __post_init__(self) -> None:
        lam = np.asarray(self.lam, dtype=np.float64)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError(f"point must be a non-empty vector, got shape {lam.shape}")
        if np.any(lam < 0) or abs(math.fsum(lam) - 1.0) > SUM_TOLERANCE:
            raise ValueError(f"not a probability vector: sum={math.fsum(lam)!r}, min={lam.min()!r}")
        object.__setattr__(self, "lam", lam)

    @classmethod
    def of(cls, values: Sequence[float]) -> SimplexPoint:
        return cls(np.asarray(values, dtype=np.float64))

    def __len__(self) -> int:
        return int(self.lam.shape[0])

    def to_list(self) -> list[float]:
        return [float(v) for v in self.lam]


class ConstraintKind(str, Enum):
    ATOM_MASS = "atom_mass"
    CAP = "cap"


@dataclass(frozen=True)
class ConstraintSet:
    """A constraint on the simplex of dimension ``n``.

    Build through :meth:`atom_mass` or :meth:`cap`, which check feasibility.
    """

    kind: ConstraintKind
    n: int
    eps: float
    delta: float | None = None

    @classmethod
    def atom_mass(cls, eps: float, delta: float, n: int) -> ConstraintSet:
        if not 0.5 < delta < 1:
            raise ValueError(f"delta must lie in (1/2, 1), got {delta}")
        if not 0 < eps < 1 - delta:
            raise ValueError(f"eps must lie in (0, 1 - delta), got {eps}")
        ratio = (1 - delta) / eps
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"(1 - delta)/eps must be a positive integer, got {ratio:g}")
        if n < round(ratio) + 1:
            raise ValueError(f"atom_mass(eps={eps}, delta={delta}) needs n >= {round(ratio) + 1}, got {n}")
        return cls(ConstraintKind.ATOM_MASS, n, eps, delta)

    @classmethod
    def cap(cls, eps: float, n: int) -> ConstraintSet:
        k = 1 / eps if eps > 0 else math.inf
        if not math.isfinite(k) or abs(k - round(k)) > 1e-9 or round(k) < 1:
            raise ValueError(f"cap needs eps = 1/k for a positive integer k, got {eps}")
        if n < round(k):
            raise ValueError(f"cap(eps={eps}) needs n >= {round(k)}, got {n}")
        return cls(ConstraintKind.CAP, n, eps)

    @property
    def block(self) -> int:
        """Number of ``eps`` entries in the closed-form minimizer."""
        if self.kind is ConstraintKind.ATOM_MASS:
            return round((1 - self.delta) / self.eps)
        return round(1 / self.eps)

    @property
    def min_dimension(self) -> int:
        return self.block + 1 if self.kind is ConstraintKind.ATOM_MASS else self.block

    def contains(self, point: SimplexPoint | np.ndarray, tol: float = 1e-12) -> bool:
        lam = point.lam if isinstance(point, SimplexPoint) else np.asarray(point, dtype=np.float64)
        if lam.shape != (self.n,) or np.any(lam < -tol) or abs(lam.sum() - 1.0) > 1e-9:
            return False
        if self.kind is ConstraintKind.ATOM_MASS:
            return bool(lam[lam > self.eps + tol].sum() <= self.delta + tol)
        return bool(np.all(lam <= self.eps + tol))

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"kind": self.kind.value, "n": self.n, "eps": self.eps}
        if self.delta is not None:
            data["delta"] = self.delta
        return data

    def __str__(self) -> str:
        if self.kind is ConstraintKind.ATOM_MASS:
            return f"atom_mass(eps={self.eps:g}, delta={self.delta:g}, n={self.n})"
        return f"cap(eps={self.eps:g}, n={self.n})"


@dataclass(frozen=True)
class SampleBank:
    """``m`` i.i.d. rows of ``ln X`` over ``width`` coordinate slots."""

    log_x: np.ndarray

    def __post_init__(self) -> None:
        log_x = np.asarray(self.log_x, dtype=np.float64)
        if log_x.ndim != 2 or log_x.shape[0] < 1:
            raise ValueError(f"bank must be an (m, width) array, got shape {log_x.shape}")
        if not np.all(np.isfinite(log_x)):
            raise SampleError(f"bank holds {int(np.count_nonzero(~np.isfinite(log_x)))} non-finite ln X")
        object.__setattr__(self, "log_x", log_x)

    @property
    def m(self) -> int:
        return int(self.log_x.shape[0])

    @property
    def width(self) -> int:
        return int(self.log_x.shape[1])

    @classmethod
    def from_spec(
        cls,
        spec: EnvSpec,
        beta: float,
        m: int,
        width: int,
        seed: int,
        *,
        replica_id: int = 0,
        row_offset: int = 0,
    ) -> SampleBank:
        """``X = exp(beta * eta)`` drawn from the counter-based field.

        Row ``r`` and column ``i`` hash to site ``(r + row_offset, i)`` of
        layer 0, so any chunk of rows can be regenerated on its own.
        """
        rows = np.arange(row_offset, row_offset + m, dtype=np.int64)
        cols = np.arange(width, dtype=np.int64)
        sites = np.stack(np.meshgrid(rows, cols, indexing="ij"), axis=-1).reshape(-1, 2)
        eta = EnvField(spec, seed, replica_id).layer(0, sites).reshape(m, width)
        return cls(beta * eta)

    @classmethod
    def constant(cls, c: float, m: int, width: int) -> SampleBank:
        """``X == c``."""
        if c <= 0:
            raise ValueError(f"X must be positive, got {c}")
        return cls(np.full((m, width), math.log(c)))

    def permuted(self, perm: Sequence[int]) -> SampleBank:
        return SampleBank(self.log_x[:, list(perm)])


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


def _log_lam(lam: np.ndarray) -> np.ndarray:
    out = np.full(lam.shape, -np.inf)
    np.log(lam, out=out, where=lam > 0)
    return out


def _row_values(lam: np.ndarray, log_x: np.ndarray) -> np.ndarray:
    active = lam > 0
    values = logsumexp(log_x[:, : lam.shape[0]][:, active] + _log_lam(lam[active]), axis=1)
    if not np.all(np.isfinite(values)):
        raise SampleError("objective row is not finite")
    return values


def _mean_stderr(values: np.ndarray) -> tuple[float, float]:
    if values.shape[0] < 2 or np.ptp(values) == 0:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.shape[0]))


def mc_objective(point: SimplexPoint, bank: SampleBank) -> tuple[float, float]:
    """Sample mean and standard error of ``ln sum_i lambda_i X_i``."""
    if len(point) > bank.width:
        raise ValueError(f"point has {len(point)} coordinates, bank only {bank.width}")
    return _mean_stderr(_row_values(point.lam, bank.log_x))


def jensen_upper(point: SimplexPoint, bank: SampleBank) -> float:
    """``ln`` of the bank mean of ``sum_i lambda_i X_i``; bounds the objective above."""
    values = _row_values(point.lam, bank.log_x)
    return float(logsumexp(values) - math.log(values.shape[0]))


def _gradient(lam: np.ndarray, log_x: np.ndarray) -> np.ndarray:
    # d/d lambda_i E[ln S] = E[X_i / S]
    cols = log_x[:, : lam.shape[0]]
    log_s = logsumexp(cols + _log_lam(lam), axis=1)
    return np.exp(cols - log_s[:, None]).mean(axis=0)


# ---------------------------------------------------------------------------
# Feasible points
# ---------------------------------------------------------------------------


def closed_form_minimizer(constraint: ConstraintSet) -> SimplexPoint:
    lam = np.zeros(constraint.n)
    if constraint.kind is ConstraintKind.ATOM_MASS:
        lam[0] = constraint.delta
        lam[1 : constraint.block + 1] = constraint.eps
    else:
        lam[: constraint.block] = constraint.eps
    return SimplexPoint(lam)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort method)."""
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - 1.0
    ind = np.arange(1, v.shape[0] + 1)
    rho = np.count_nonzero(u - cssv / ind > 0)
    theta = cssv[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def _project_capped(v: np.ndarray, cap: float) -> np.ndarray:
    lo, hi = float(v.min()) - cap, float(v.max())

    def excess(tau: float) -> float:
        return float(np.clip(v - tau, 0.0, cap).sum()) - 1.0

    if excess(lo) < 0:
        raise ProjectionError(f"cap {cap} leaves the simplex empty in dimension {v.shape[0]}")
    tau = brentq(excess, lo, hi, xtol=1e-15)
    return np.clip(v - tau, 0.0, cap)


def _repair_atom_mass(x: np.ndarray, eps: float, delta: float, block: int) -> np.ndarray:
    # Demote the smallest >eps coordinates until the rest can absorb the
    # excess, then shrink the >eps block to mass delta and fill the freed
    # mass into the <=eps coordinates proportionally to their room.
    x = x.copy()
    for _ in range(x.shape[0] + 1):
        big = x > eps
        mass = float(x[big].sum())
        if mass <= delta + SUM_TOLERANCE:
            return x
        if np.count_nonzero(~big) < block:
            i = int(np.flatnonzero(big)[np.argmin(x[big])])
            freed = x[i] - eps
            x[i] = eps
            big[i] = False
            x[big] += freed * x[big] / x[big].sum()
            continue
        excess = mass - delta
        room = float((eps - x[~big]).sum())
        x[big] *= delta / mass
        x[~big] = np.minimum(x[~big] + (eps - x[~big]) * (excess / room), eps)
    return x


def project(v: np.ndarray | SimplexPoint, constraint: ConstraintSet) -> SimplexPoint:
    """Map ``v`` to a nearby point of the constraint set.

    For ``cap`` this is the exact Euclidean projection. The ``atom_mass`` set
    is not convex; the point is projected onto the simplex and then repaired
    by a finite redistribution, which yields a feasible point but not
    necessarily the nearest one.

    Raises
    ------
    ProjectionError
        If the result is not feasible.
    """
    v = v.lam if isinstance(v, SimplexPoint) else np.asarray(v, dtype=np.float64)
    if v.shape != (constraint.n,):
        raise ProjectionError(f"expected a vector of length {constraint.n}, got shape {v.shape}")
    if constraint.kind is ConstraintKind.CAP:
        x = _project_capped(v, constraint.eps)
    else:
        x = _repair_atom_mass(project_simplex(v), constraint.eps, constraint.delta, constraint.block)
    x = np.maximum(x, 0.0)
    x /= x.sum()
    if not constraint.contains(x, tol=1e-9):
        raise ProjectionError(f"could not project onto {constraint}")
    return SimplexPoint(x)


def random_feasible_point(constraint: ConstraintSet, rng: np.random.Generator) -> SimplexPoint:
    """Flat Dirichlet draw pushed into the constraint set."""
    return project(rng.dirichlet(np.ones(constraint.n)), constraint)


def transfer(point: SimplexPoint, i: int, k: int, rho: float) -> SimplexPoint:
    """Move mass ``rho`` from coordinate ``k`` to coordinate ``i``.

    Requires ``lambda_i >= lambda_k > 0`` and ``0 < rho <= lambda_k``.
    """
    lam = point.lam.copy()
    if not lam[i] >= lam[k] > 0:
        raise ValueError(f"need lambda[{i}] >= lambda[{k}] > 0, got {lam[i]}, {lam[k]}")
    if not 0 < rho <= lam[k]:
        raise ValueError(f"rho must lie in (0, {lam[k]}], got {rho}")
    lam[i] += rho
    lam[k] -= rho
    lam[k] = max(lam[k], 0.0)
    return SimplexPoint(lam)


def l1_distance_up_to_permutation(a: SimplexPoint | np.ndarray, b: SimplexPoint | np.ndarray) -> float:
    """Smallest L1 distance over coordinate relabelings (sorted matching)."""
    a = a.lam if isinstance(a, SimplexPoint) else np.asarray(a, dtype=np.float64)
    b = b.lam if isinstance(b, SimplexPoint) else np.asarray(b, dtype=np.float64)
    size = max(a.shape[0], b.shape[0])
    a = np.sort(np.pad(a, (0, size - a.shape[0])))
    b = np.sort(np.pad(b, (0, size - b.shape[0])))
    return float(np.abs(a - b).sum())


# ---------------------------------------------------------------------------
# Minimization
# ---------------------------------------------------------------------------


@dataclass
class MinimizeResult:
    point: SimplexPoint
    value: float
    stderr: float
    start_index: int
    values: list[float] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "point": self.point.to_list(),
            "value": self.value,
            "stderr": self.stderr,
            "start_index": self.start_index,
        }


def _descend(
    start: np.ndarray,
    constraint: ConstraintSet,
    log_x: np.ndarray,
    steps: int,
    step_size: float,
) -> tuple[np.ndarray, float]:
    x = start
    value = float(_row_values(x, log_x).mean())
    for _ in range(steps):
        grad = _gradient(x, log_x)
        t = step_size
        while t > 1e-6:
            y = project(x - t * grad, constraint).lam
            fy = float(_row_values(y, log_x).mean())
            if fy < value:
                x, value = y, fy
                break
            t *= 0.5
        else:
            break
    return x, value


def constrained_minimize(
    constraint: ConstraintSet,
    bank: SampleBank,
    restarts: int = 8,
    *,
    steps: int = 100,
    step_size: float = 0.25,
    seed: int = 0,
    threads: int = 1,
) -> MinimizeResult:
    """Projected descent from the closed form and ``restarts`` random starts.

    Start 0 is the closed-form point. The lowest final value wins; ties go to
    the lower start index.
    """
    if bank.width < constraint.n:
        raise ValueError(f"bank width {bank.width} < constraint dimension {constraint.n}")
    rng = np.random.default_rng(seed)
    starts = [closed_form_minimizer(constraint).lam]
    starts += [random_feasible_point(constraint, rng).lam for _ in range(restarts)]

    def run(index: int) -> tuple[np.ndarray, float]:
        return _descend(starts[index], constraint, bank.log_x, steps, step_size)

    outcomes = ReplicaPool(threads).map(run, range(len(starts)))
    best = 0
    for index, (_, value) in enumerate(outcomes):
        if value < outcomes[best][1]:
            best = index
    point = SimplexPoint(outcomes[best][0])
    value, stderr = mc_objective(point, bank)
    logger.debug("constrained_minimize %s: best start %d, value %.6g", constraint, best, value)
    return MinimizeResult(point, value, stderr, best, [v for _, v in outcomes])


@dataclass
class OptimalityReport:
    """Random feasible points compared with the closed form on one bank.

    ``worst_margin`` is the smallest ``(f(random) - f(closed)) / stderr`` over
    the trials, using paired differences.
    """

    constraint: ConstraintSet
    trials: int
    closed_value: float
    closed_stderr: float
    worst_margin: float
    violations: int

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "constraint": self.constraint.to_dict(),
            "trials": self.trials,
            "closed_value": self.closed_value,
            "closed_stderr": self.closed_stderr,
            "worst_margin": self.worst_margin,
            "violations": self.violations,
        }


def closed_form_optimality(
    constraint: ConstraintSet, bank: SampleBank, trials: int = 200, *, seed: int = 0, k: float = 3.0
) -> OptimalityReport:
    """Count random feasible points beating the closed form by more than ``k`` stderr."""
    rng = np.random.default_rng(seed)
    closed = _row_values(closed_form_minimizer(constraint).lam, bank.log_x)
    closed_value, closed_stderr = _mean_stderr(closed)
    worst = math.inf
    violations = 0
    for _ in range(trials):
        diff = _row_values(random_feasible_point(constraint, rng).lam, bank.log_x) - closed
        mean, stderr = _mean_stderr(diff)
        if mean < -k * stderr - 1e-12:
            violations += 1
        if stderr > 0:
            worst = min(worst, mean / stderr)
    return OptimalityReport(constraint, trials, closed_value, closed_stderr, worst, violations)


# ---------------------------------------------------------------------------
# Averaged-moment limit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UtileRow:
    n: int
    beta: float
    value: float
    stderr: float

    def to_dict(self) -> dict[str, Any]:
        return {"n": self.n, "beta": self.beta, "value": self.value, "stderr": self.stderr}


@dataclass
class UtileTable:
    """``inf_beta E[ln((1/n) sum X_i^beta)]`` per ``n`` against ``inf_beta lambda(beta)``."""

    spec: EnvSpec
    interval: tuple[float, float]
    target: float
    target_beta: float
    rows: list[UtileRow] = field(default_factory=list)

    def nondecreasing(self, k: float = 3.0) -> bool:
        return all(
            b.value >= a.value - k * math.hypot(a.stderr, b.stderr)
            for a, b in zip(self.rows, self.rows[1:])
        )

    def converged(self, k: float = 3.0, slack: float = 0.01) -> bool:
        last = self.rows[-1]
        return abs(last.value - self.target) <= k * last.stderr + slack

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "interval": list(self.interval),
            "target": self.target,
            "target_beta": self.target_beta,
            "rows": [r.to_dict() for r in self.rows],
        }


class _EtaSource:
    """Rows of eta for one ``n``, held in memory or regenerated chunkwise."""

    def __init__(self, spec: EnvSpec, n: int, m: int, seed: int) -> None:
        self.spec, self.n, self.m, self.seed = spec, n, m, seed
        self.chunk = max(1, MAX_BANK_CELLS // n)
        self._held = self._rows(0, m).log_x if m <= self.chunk else None

    def _rows(self, start: int, count: int) -> SampleBank:
        return SampleBank.from_spec(
            self.spec, 1.0, count, self.n, self.seed, replica_id=self.n, row_offset=start
        )

    def row_values(self, beta: float) -> np.ndarray:
        if self._held is not None:
            return logsumexp(beta * self._held, axis=1) - math.log(self.n)
        parts = []
        for start in range(0, self.m, self.chunk):
            eta = self._rows(start, min(self.chunk, self.m - start)).log_x
            parts.append(logsumexp(beta * eta, axis=1) - math.log(self.n))
        return np.concatenate(parts)


def lemma_utile_check(
    spec: EnvSpec,
    interval: tuple[float, float],
    n_list: Sequence[int],
    m: int,
    seed: int,
    *,
    grid_size: int = 9,
) -> UtileTable:
    """Minimize the averaged-moment objective over ``beta`` in ``[a, b]`` per ``n``.

    The inner infimum is a grid search refined by bounded Brent on the
    bracketing cell. One sample source per ``n`` serves every ``beta``.

    Raises
    ------
    GridError
        Unless ``0 < a < b < R``.
    """
    a, b = interval
    radius = mgf_radius(spec)
    if not 0 < a < b or b >= radius:
        raise GridError(f"need 0 < a < b < R={radius}, got [{a}, {b}]")
    if list(n_list) != sorted(set(n_list)) or min(n_list) < 1:
        raise GridError(f"n_list must be increasing positive integers, got {list(n_list)}")

    inner = minimize_scalar(lambda beta: log_mgf(spec, beta), bounds=(a, b), method="bounded")
    candidates = [(log_mgf(spec, a), a), (log_mgf(spec, b), b), (float(inner.fun), float(inner.x))]
    target, target_beta = min(candidates)
    table = UtileTable(spec, (a, b), target, target_beta)

    grid = np.linspace(a, b, grid_size)
    for n in n_list:
        source = _EtaSource(spec, n, m, seed)
        cache: dict[float, np.ndarray] = {}

        def objective(beta: float) -> float:
            if beta not in cache:
                cache[beta] = source.row_values(beta)
            return float(cache[beta].mean())

        values = [objective(float(beta)) for beta in grid]
        i = int(np.argmin(values))
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid_size - 1)]
        best_beta = float(grid[i])
        if hi > lo:
            refined = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-3})
            if refined.fun < values[i]:
                best_beta = float(refined.x)
        value, stderr = _mean_stderr(cache[best_beta])
        table.rows.append(UtileRow(n, best_beta, value, stderr))
        logger.info("averaged-moment check n=%d: beta*=%.4g value=%.6g +- %.2g", n, best_beta, value, stderr)
    return table
