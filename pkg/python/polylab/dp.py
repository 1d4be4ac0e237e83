"""Exact lattice kernels for the directed polymer.

Three recursions share one sparse cone representation (see
:mod:`polylab.types`):

- :func:`evolve` -- the transfer-matrix recursion in log scale. Each step
  convolves the endpoint law with the walk kernel to get the predictive law
  ``nu_j``, weights it by ``exp(beta * eta(j, .))`` and renormalizes.
- :func:`max_path_energy` -- the max-plus analogue giving ``N(n)``.
- :func:`brute_force_oracle` -- explicit enumeration of all ``(2d)^n`` paths,
  an independent check of both.

All reductions run in ascending site-key order, so results do not depend on
how replicas are scheduled.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb, logsumexp

from polylab.env import Environment
from polylab.exceptions import BudgetError, LogWeightOverflowError
from polylab.hooks import StepObserver
from polylab.types import LatticeSlice, PathStats, PolymerState, decode_keys, encode_sites

logger = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_MEMORY_BUDGET",
    "ORACLE_MAX_N",
    "ORACLE_MAX_PATHS",
    "OracleResult",
    "Transform",
    "cone_size",
    "estimate_bytes",
    "check_budget",
    "identity",
    "excess_over",
    "clamp",
    "evolve",
    "truncated_evolve",
    "max_path_energy",
    "brute_force_oracle",
]

DEFAULT_MEMORY_BUDGET = 512 * 2**20
MAX_DIMENSION = 3
ORACLE_MAX_N = 14
ORACLE_MAX_PATHS = 4**8

Transform = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# Budget
# ---------------------------------------------------------------------------


def cone_size(n: int, d: int) -> int:
    """Number of sites reachable at time ``n``: ``|x|_1 <= n``, parity of ``n``."""
    total = 0
    for k in range(n % 2, n + 1, 2):
        if k == 0:
            total += 1
            continue
        total += sum(
            2**i * int(comb(d, i, exact=True)) * int(comb(k - 1, i - 1, exact=True))
            for i in range(1, min(d, k) + 1)
        )
    return total


def estimate_bytes(n: int, d: int) -> int:
    """Peak working set of one step at horizon ``n``."""
    return cone_size(n, d) * (2 * d + 4) * 8


def check_budget(n: int, d: int, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> None:
    """Raise :class:`BudgetError` naming the limiting parameter."""
    if d not in range(1, MAX_DIMENSION + 1):
        raise BudgetError(f"dimension d={d} unsupported (1 <= d <= {MAX_DIMENSION})", "d")
    if n < 1:
        raise ValueError(f"horizon must be >= 1, got n={n}")
    need = estimate_bytes(n, d)
    if need > memory_budget:
        raise BudgetError(
            f"horizon n={n} in d={d} needs ~{need / 2**20:.0f} MiB per slice, "
            f"over the memory budget of {memory_budget / 2**20:.0f} MiB",
            "n",
        )


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------


def identity(eta: np.ndarray) -> np.ndarray:
    return eta


def excess_over(level: float) -> Transform:
    """``eta -> (|eta| - level)_+``."""

    def transform(eta: np.ndarray) -> np.ndarray:
        return np.maximum(np.abs(eta) - level, 0.0)

    return transform


def clamp(level: float) -> Transform:
    """``eta -> eta wedge level vee -level``."""

    def transform(eta: np.ndarray) -> np.ndarray:
        return np.clip(eta, -level, level)

    return transform


# ---------------------------------------------------------------------------
# Cone geometry
# ---------------------------------------------------------------------------


class _Cone:
    """Support of the walk and neighbor lookup between consecutive layers.

    ``shifts[i]`` is the key difference from a predecessor site to the
    current one along step direction ``i``.
    """

    def __init__(self, d: int, n: int) -> None:
        self.d = d
        # One spare unit so that neighbor keys never wrap into another row.
        self.half_width = n + 1
        base = 2 * self.half_width + 1
        strides = [base ** (d - 1 - k) for k in range(d)]
        self.shifts = np.array(
            [s for stride in strides for s in (stride, -stride)], dtype=np.int64
        )
        self.keys = encode_sites(np.zeros((1, d), dtype=np.int64), self.half_width)
        self.j = 0

    def advance(self) -> tuple[np.ndarray, np.ndarray]:
        """Step the support; return ``(pred_index, hit)`` of shape ``(2d, m)``."""
        prev = self.keys
        if self.d == 1:
            # Interval fast path: x = -j, -j+2, ..., j.
            j = self.j + 1
            keys = np.arange(-j, j + 1, 2, dtype=np.int64) + self.half_width
            m = keys.shape[0]
            pred = np.empty((2, m), dtype=np.int64)
            pred[0] = np.arange(m) - 1  # from x - 1
            pred[1] = np.arange(m)  # from x + 1
            hit = np.empty((2, m), dtype=bool)
            hit[0] = pred[0] >= 0
            hit[1] = pred[1] < prev.shape[0]
            np.clip(pred, 0, prev.shape[0] - 1, out=pred)
        else:
            keys = np.unique((prev[None, :] + self.shifts[:, None]).ravel())
            src = keys[None, :] - self.shifts[:, None]
            pred = np.searchsorted(prev, src)
            np.clip(pred, 0, prev.shape[0] - 1, out=pred)
            hit = prev[pred] == src
        self.keys = keys
        self.j += 1
        return pred, hit

    def sites(self) -> np.ndarray:
        return decode_keys(self.keys, self.d, self.half_width)

    def slice(self, values: np.ndarray) -> LatticeSlice:
        return LatticeSlice(self.j, self.d, self.half_width, self.keys, values)


def _gather(values: np.ndarray, pred: np.ndarray, hit: np.ndarray, fill: float) -> np.ndarray:
    out = values[pred]
    out[~hit] = fill
    return out


# ---------------------------------------------------------------------------
# Partition function
# ---------------------------------------------------------------------------


def evolve(
    field: Environment,
    beta: float,
    n: int,
    d: int,
    observer: StepObserver | None = None,
    *,
    truncation: float | None = None,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> PolymerState:
    """Run the polymer recursion for ``n`` steps.

    For each ``j``: ``nu_j = (1/2d) sum_neighbors rho_{j-1}``,
    ``ln(Z_j/Z_{j-1}) = logsumexp(ln nu_j + beta*eta_j)`` and
    ``rho_j = nu_j exp(beta*eta_j) / (Z_j/Z_{j-1})``.

    Parameters
    ----------
    field:
        The environment realization.
    beta:
        Inverse temperature, finite and >= 0.
    n:
        Horizon.
    d:
        Lattice dimension, 1 to 3.
    observer:
        Called as ``observer(j, nu_j, rho_j, increment)`` after every step.
    truncation:
        When given, eta is clamped to ``[-truncation, truncation]``.
    memory_budget:
        Refuse horizons whose slices would exceed this many bytes.

    Raises
    ------
    BudgetError
        If ``(n, d)`` exceed the memory budget.
    LogWeightOverflowError
        If some ``beta * eta(j, x)`` is not finite.
    """
    if not math.isfinite(beta) or beta < 0:
        raise ValueError(f"beta must be finite and >= 0, got {beta}")
    if truncation is not None and not truncation > 0:
        raise ValueError(f"truncation level must be > 0, got {truncation}")
    check_budget(n, d, memory_budget)

    cone = _Cone(d, n)
    log_rho = np.zeros(1)
    log_nu = log_rho
    log_2d = math.log(2 * d)
    increments: list[float] = []
    log_z = 0.0

    for j in range(1, n + 1):
        pred, hit = cone.advance()
        log_nu = logsumexp(_gather(log_rho, pred, hit, -np.inf), axis=0) - log_2d
        if beta == 0:
            increment = 0.0
            log_rho = log_nu
        else:
            eta = field.layer(j, cone.sites())
            if truncation is not None and math.isfinite(truncation):
                eta = np.clip(eta, -truncation, truncation)
            weights = beta * eta
            if not np.all(np.isfinite(weights)):
                bad = int(np.count_nonzero(~np.isfinite(weights)))
                raise LogWeightOverflowError(f"beta*eta is not finite at {bad} site(s) of layer j={j}")
            weighted = log_nu + weights
            increment = float(logsumexp(weighted))
            log_rho = weighted - increment
        increments.append(increment)
        log_z += increment
        if observer is not None:
            observer(j, cone.slice(log_nu), cone.slice(log_rho), increment)

    logger.debug("evolve: beta=%g n=%d d=%d log_z=%.6g", beta, n, d, log_z)
    return PolymerState(
        j=n,
        rho=cone.slice(log_rho),
        nu=cone.slice(log_nu),
        log_z=log_z,
        step_increments=increments,
    )


def truncated_evolve(
    field: Environment,
    beta: float,
    n: int,
    d: int,
    level: float,
    observer: StepObserver | None = None,
    *,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> PolymerState:
    """:func:`evolve` with the clamped Hamiltonian; ``log_z`` is ``n * Y_{n,L}``.

    ``level = inf`` reduces to :func:`evolve`.
    """
    return evolve(
        field,
        beta,
        n,
        d,
        observer,
        truncation=None if math.isinf(level) else level,
        memory_budget=memory_budget,
    )


# ---------------------------------------------------------------------------
# Path maxima
# ---------------------------------------------------------------------------


def max_path_energy(
    field: Environment,
    n: int,
    d: int,
    transform: Transform | None = None,
    *,
    record_at: Sequence[int] = (),
    track_path: bool = False,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> PathStats:
    """Maximum over oriented paths of ``sum_j w(eta(j, omega_j))``.

    ``V_j(x) = max_{y ~ x} V_{j-1}(y) + w(eta(j, x))`` with ``V_0 = 0`` at the
    origin; ``N(n) = max_x V_n(x)``.

    Parameters
    ----------
    transform:
        Vectorized per-site map ``w``; identity by default.
    record_at:
        Horizons ``m <= n`` at which ``N(m)`` is also recorded.
    track_path:
        Keep back-pointers and return a maximizing path.
    """
    check_budget(n, d, memory_budget)
    transform = transform or identity
    checkpoints = set(record_at)
    if checkpoints and (min(checkpoints) < 1 or max(checkpoints) > n):
        raise ValueError(f"record_at must lie in [1, {n}], got {sorted(checkpoints)}")

    cone = _Cone(d, n)
    value = np.zeros(1)
    history: list[tuple[np.ndarray, np.ndarray]] = []
    max_by_n: dict[int, float] = {}

    for j in range(1, n + 1):
        prev_keys = cone.keys
        pred, hit = cone.advance()
        candidates = _gather(value, pred, hit, -np.inf)
        choice = np.argmax(candidates, axis=0)
        best = candidates[choice, np.arange(choice.shape[0])]
        w = np.asarray(transform(field.layer(j, cone.sites())), dtype=np.float64)
        if not np.all(np.isfinite(w)):
            raise LogWeightOverflowError(f"transformed weight is not finite on layer j={j}")
        value = best + w
        if track_path:
            history.append((prev_keys, pred[choice, np.arange(choice.shape[0])]))
        if j in checkpoints:
            max_by_n[j] = float(value.max())

    top = int(np.argmax(value))
    stats = PathStats(n=n, max_energy=float(value[top]), max_by_n=max_by_n)
    if track_path:
        stats.path = _backtrack(cone, history, top)
    return stats


def _backtrack(
    cone: _Cone, history: list[tuple[np.ndarray, np.ndarray]], top: int
) -> list[tuple[int, ...]]:
    keys = [int(cone.keys[top])]
    idx = top
    for prev_keys, pred in reversed(history[1:]):
        idx = int(pred[idx])
        keys.append(int(prev_keys[idx]))
    keys.reverse()
    sites = decode_keys(np.array(keys, dtype=np.int64), cone.d, cone.half_width)
    return [tuple(row.tolist()) for row in sites]


# ---------------------------------------------------------------------------
# Enumeration oracle
# ---------------------------------------------------------------------------


@dataclass
class OracleResult:
    """Quantities computed by explicit path enumeration.

    Attributes
    ----------
    log_z:
        ``ln Z_n``.
    nu:
        ``nu_j`` for ``j = 1..n`` as ``{site: probability}``.
    max_energy:
        ``N(n)`` for the identity transform (after truncation, if any).
    """

    log_z: float
    nu: list[dict[tuple[int, ...], float]] = field(default_factory=list)
    max_energy: float = 0.0


def brute_force_oracle(
    field: Environment,
    beta: float,
    n: int,
    d: int,
    truncation: float | None = None,
) -> OracleResult:
    """Enumerate all ``(2d)^n`` equally likely paths.

    Raises
    ------
    BudgetError
        If ``n > ORACLE_MAX_N`` or ``(2d)^n > ORACLE_MAX_PATHS``.
    """
    if n > ORACLE_MAX_N:
        raise BudgetError(f"oracle horizon n={n} exceeds {ORACLE_MAX_N}", "n")
    if (2 * d) ** n > ORACLE_MAX_PATHS:
        raise BudgetError(
            f"oracle needs (2d)^n = {(2 * d) ** n} paths, cap is {ORACLE_MAX_PATHS}", "n"
        )
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")

    units = np.zeros((2 * d, d), dtype=np.int64)
    for c in range(2 * d):
        units[c, c // 2] = 1 if c % 2 == 0 else -1
    choices = np.array(list(itertools.product(range(2 * d), repeat=n)), dtype=np.int64)
    positions = np.cumsum(units[choices], axis=1)  # (paths, n, d)

    eta = np.stack([field.layer(j + 1, positions[:, j, :]) for j in range(n)], axis=1)
    if truncation is not None:
        eta = np.clip(eta, -truncation, truncation)
    energy = np.cumsum(eta, axis=1)
    n_paths = choices.shape[0]

    if beta == 0:
        log_z = 0.0
    else:
        log_z = float(logsumexp(beta * energy[:, -1]) - math.log(n_paths))

    half_width = n + 1
    nus: list[dict[tuple[int, ...], float]] = []
    for j in range(1, n + 1):
        if j == 1 or beta == 0:
            log_w = np.zeros(n_paths)
        else:
            log_w = beta * energy[:, j - 2]
        probs = np.exp(log_w - logsumexp(log_w))
        keys = encode_sites(positions[:, j - 1, :], half_width)
        uniq, inverse = np.unique(keys, return_inverse=True)
        mass = np.bincount(inverse, weights=probs, minlength=uniq.shape[0])
        sites = decode_keys(uniq, d, half_width)
        nus.append({tuple(s.tolist()): float(m) for s, m in zip(sites, mass)})

    return OracleResult(log_z=log_z, nu=nus, max_energy=float(energy[:, -1].max()))
