"""Shared lattice data types for polylab.

A :class:`LatticeSlice` is the sparse view of one time layer of the walk's
reachable cone: sorted integer site keys plus a natural-log value per site.
Keys encode a site ``x`` in the box ``[-w, w]^d`` as
``sum_k (x_k + w) * (2w + 1)^(d - 1 - k)``, so ascending key order is the
lexicographic order of sites and doubles as the fixed summation order.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "LatticeSlice",
    "PolymerState",
    "PathStats",
    "encode_sites",
    "decode_keys",
]


def encode_sites(sites: np.ndarray, half_width: int) -> np.ndarray:
    """Integer keys of the rows of ``sites`` inside the box of ``half_width``."""
    sites = np.asarray(sites, dtype=np.int64)
    base = 2 * half_width + 1
    keys = np.zeros(sites.shape[0], dtype=np.int64)
    for k in range(sites.shape[1]):
        keys = keys * base + (sites[:, k] + half_width)
    return keys


def decode_keys(keys: np.ndarray, d: int, half_width: int) -> np.ndarray:
    """Inverse of :func:`encode_sites`; returns an ``(m, d)`` int64 array."""
    base = 2 * half_width + 1
    rest = np.asarray(keys, dtype=np.int64).copy()
    sites = np.empty((rest.shape[0], d), dtype=np.int64)
    for k in range(d - 1, -1, -1):
        sites[:, k] = rest % base - half_width
        rest //= base
    return sites


@dataclass
class LatticeSlice:
    """Sparse log-scale values on the reachable sites at time ``j``.

    Parameters
    ----------
    j:
        Time index of the layer.
    d:
        Lattice dimension.
    half_width:
        Half-width of the key box; at least the largest coordinate modulus.
    keys:
        Sorted int64 site keys (see :func:`encode_sites`).
    log_values:
        Natural-log value per key, all finite.
    """

    j: int
    d: int
    half_width: int
    keys: np.ndarray
    log_values: np.ndarray

    @classmethod
    def from_mapping(
        cls,
        j: int,
        mapping: Mapping[Any, float],
        *,
        d: int | None = None,
        half_width: int | None = None,
    ) -> LatticeSlice:
        """Build from ``{site: probability}``; zero entries are dropped.

        Sites may be ints (d = 1) or tuples.
        """
        items = [(_as_tuple(site), float(p)) for site, p in mapping.items() if p > 0]
        if d is None:
            d = len(items[0][0]) if items else 1
        sites = np.array([s for s, _ in items], dtype=np.int64).reshape(-1, d)
        probs = np.array([p for _, p in items], dtype=np.float64)
        if half_width is None:
            reach = int(np.abs(sites).max()) if sites.size else 0
            half_width = max(j, reach)
        keys = encode_sites(sites, half_width)
        order = np.argsort(keys, kind="stable")
        return cls(j, d, half_width, keys[order], np.log(probs[order]))

    def __len__(self) -> int:
        return int(self.keys.shape[0])

    @property
    def sites(self) -> np.ndarray:
        return decode_keys(self.keys, self.d, self.half_width)

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_values)

    def total_mass(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.exp(logsumexp(self.log_values)))

    def to_dict(self) -> dict[tuple[int, ...], float]:
        return {
            tuple(site.tolist()): float(p)
            for site, p in zip(self.sites, self.probabilities())
        }

    def get(self, site: Any, default: float = 0.0) -> float:
        key = encode_sites(np.array([_as_tuple(site)], dtype=np.int64), self.half_width)[0]
        idx = int(np.searchsorted(self.keys, key))
        if idx < len(self) and self.keys[idx] == key:
            return float(math.exp(self.log_values[idx]))
        return default

    def favorite(self) -> tuple[tuple[int, ...], float]:
        idx = int(np.argmax(self.log_values))
        return tuple(self.sites[idx].tolist()), float(math.exp(self.log_values[idx]))

    def geometry_ok(self) -> bool:
        """Every site has coordinate sum of the parity of ``j`` and norm <= ``j``."""
        sites = self.sites
        if not np.all(np.isfinite(self.log_values)):
            return False
        norm = np.abs(sites).sum(axis=1)
        parity = sites.sum(axis=1) % 2
        return bool(np.all(norm <= self.j) and np.all(parity == self.j % 2))

    def __repr__(self) -> str:
        return f"LatticeSlice(j={self.j}, d={self.d}, sites={len(self)})"


def _as_tuple(site: Any) -> tuple[int, ...]:
    if isinstance(site, Iterable):
        return tuple(int(c) for c in site)
    return (int(site),)


@dataclass
class PolymerState:
    """Endpoint and predictive laws of the polymer after ``j`` steps.

    Attributes
    ----------
    j:
        Current time.
    rho:
        ``ln rho_j(x)``, the endpoint law under the measure weighted through ``j``.
    nu:
        ``ln nu_j(x)``, the law of the ``j``-th site under the measure weighted
        through ``j - 1``.
    log_z:
        ``ln Z_j``.
    step_increments:
        ``ln(Z_i / Z_{i-1})`` for ``i = 1..j``.
    """

    j: int
    rho: LatticeSlice
    nu: LatticeSlice
    log_z: float
    step_increments: list[float] = field(default_factory=list)

    def telescoping_defect(self) -> float:
        return abs(self.log_z - math.fsum(self.step_increments))


@dataclass
class PathStats:
    """Maximal transformed energy over oriented paths of length ``n``.

    Attributes
    ----------
    n:
        Horizon.
    max_energy:
        ``N(n)``, the maximum over paths of the summed transformed weights.
    path:
        Sites of a maximizing path for ``j = 1..n`` when requested.
    max_by_n:
        ``N(m)`` at each requested checkpoint ``m <= n``.
    """

    n: int
    max_energy: float
    path: list[tuple[int, ...]] | None = None
    max_by_n: dict[int, float] = field(default_factory=dict)
