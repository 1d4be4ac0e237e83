"""Oriented site percolation threshold on the walk lattice.

Sites ``(j, x)`` of ``N x Z^d`` are open with probability ``p`` and the
oriented edges are the steps of the simple walk, ``x -> x +- e_k``. With one
uniform ``U(j, x)`` per site, a single sample of the field gives the exact
smallest ``p`` at which an open oriented path crosses ``depth`` layers: the
bottleneck recursion

    B_0(x) = 0,   B_j(x) = max(U(j, x), min_{y ~ x} B_{j-1}(y)),

ends with ``p*_T = min_x B_T(x)``. Starting from the fully open periodic line
of side ``width``, ``p*_T`` concentrates on ``p_c(d)`` as the box grows.

Usage::

    est = estimate_pc(1, width=512, depth=2048, trials=32, seed=11)
    est.value, est.stderr
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from polylab.env import EnvField, EnvSpec

logger = logging.getLogger(__name__)

__all__ = ["PcEstimate", "DEFAULT_PC", "estimate_pc", "crossing_threshold"]


@dataclass(frozen=True)
class PcEstimate:
    """An estimate of ``p_c(d)`` with its uncertainty and provenance."""

    d: int
    value: float
    stderr: float
    provenance: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"d": self.d, "value": self.value, "stderr": self.stderr, "provenance": self.provenance}


_PROVENANCE = "estimated by polylab.percolation.estimate_pc"

DEFAULT_PC: dict[int, PcEstimate] = {
    1: PcEstimate(1, 0.7055, 0.001, _PROVENANCE),
    2: PcEstimate(2, 0.4353, 0.002, _PROVENANCE),
    3: PcEstimate(3, 0.3445, 0.002, _PROVENANCE),
}


def crossing_threshold(d: int, width: int, depth: int, seed: int, trial: int = 0) -> float:
    """``p*_T`` for one realization of the site uniforms."""
    if d < 1 or width < 2 or depth < 1:
        raise ValueError(f"need d >= 1, width >= 2, depth >= 1; got {d}, {width}, {depth}")
    shape = (width,) * d
    sites = np.indices(shape).reshape(d, -1).T
    field = EnvField(EnvSpec.uniform(0.0, 1.0), master_seed=seed, replica_id=trial)

    bottleneck = np.zeros(shape)
    for j in range(1, depth + 1):
        reach = np.full(shape, np.inf)
        for axis in range(d):
            np.minimum(reach, np.roll(bottleneck, 1, axis=axis), out=reach)
            np.minimum(reach, np.roll(bottleneck, -1, axis=axis), out=reach)
        bottleneck = np.maximum(field.uniforms(j, sites).reshape(shape), reach)
    return float(bottleneck.min())


def estimate_pc(
    d: int,
    *,
    width: int = 256,
    depth: int = 1024,
    trials: int = 16,
    seed: int = 0,
) -> PcEstimate:
    """Median of ``trials`` crossing thresholds.

    The standard error is that of the median under normal fluctuations,
    ``sqrt(pi/2) * sd / sqrt(trials)``. Finite boxes bias the estimate
    slightly; ``depth`` should be a few times ``width``.
    """
    if trials < 2:
        raise ValueError(f"trials must be >= 2, got {trials}")
    values = np.array([crossing_threshold(d, width, depth, seed, t) for t in range(trials)])
    value = float(np.median(values))
    stderr = math.sqrt(math.pi / 2) * float(values.std(ddof=1)) / math.sqrt(trials)
    logger.info("p_c(%d) ~ %.4f +- %.4f (%d trials, width=%d, depth=%d)", d, value, stderr, trials, width, depth)
    return PcEstimate(d, value, stderr, f"{_PROVENANCE}(width={width}, depth={depth}, trials={trials})")
