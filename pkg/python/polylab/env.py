"""Environment laws and the reproducible random field eta(j, x).

An :class:`EnvSpec` names one law from a small catalog together with its
analytic metadata: the log moment generating function ``lambda(beta)``, its
radius ``R``, the essential supremum and the integrability conditions the
polymer model relies on. An :class:`EnvField` realizes the i.i.d. field lazily:
every value is a pure function of ``(spec, master_seed, replica_id, j, x)``
computed by hashing the coordinates with a 64-bit mixer and pushing the
resulting uniform through the law's quantile function.

Usage::

    from polylab.env import EnvField, EnvSpec, log_mgf, sample_eta

    spec = EnvSpec.exponential(rate=1.0)
    field = EnvField(spec, master_seed=7, replica_id=0)
    value = sample_eta(field, 3, (1,))
    log_mgf(spec, 0.5)   # ln 2
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Protocol

import numpy as np
from scipy.special import ndtri

from polylab.exceptions import ConditionError, SpecError

logger = logging.getLogger(__name__)

__all__ = [
    "Family",
    "EnvSpec",
    "ConditionReport",
    "Environment",
    "EnvField",
    "TabulatedField",
    "PRESETS",
    "SCHEMA_VERSION",
    "sample_eta",
    "log_mgf",
    "mgf_radius",
    "esssup",
    "mean",
    "variance",
    "atom_at_esssup",
    "positive_moment_finite",
    "lambda_over_radius",
    "check_conditions",
    "require_standing",
]

SCHEMA_VERSION = 1


class Family(str, Enum):
    """Distribution families of the environment catalog."""

    GAUSSIAN = "gaussian"
    EXPONENTIAL = "exponential"
    PARETO = "pareto"
    BERNOULLI = "bernoulli"
    UNIFORM = "uniform"
    CONSTANT = "constant"


_PARAMS: dict[Family, tuple[str, ...]] = {
    Family.GAUSSIAN: ("mean", "stddev"),
    Family.EXPONENTIAL: ("rate",),
    Family.PARETO: ("a", "scale"),
    Family.BERNOULLI: ("p", "high", "low"),
    Family.UNIFORM: ("lo", "hi"),
    Family.CONSTANT: ("value",),
}

_DEFAULTS: dict[Family, dict[str, float]] = {
    Family.GAUSSIAN: {"mean": 0.0, "stddev": 1.0},
    Family.EXPONENTIAL: {"rate": 1.0},
    Family.PARETO: {"scale": 1.0},
    Family.BERNOULLI: {"high": 1.0, "low": 0.0},
    Family.UNIFORM: {"lo": 0.0, "hi": 1.0},
    Family.CONSTANT: {},
}


@dataclass(frozen=True)
class EnvSpec:
    """A law for the i.i.d. environment, shifted by ``offset``.

    The site weight is ``eta = X - offset`` where ``X`` follows the family
    law with the given parameters.

    Parameters
    ----------
    family:
        One of :class:`Family`.
    params:
        Family parameters in natural units of eta. Missing optional
        parameters take the family defaults.
    offset:
        Subtracted from every draw; lets users center a law.
    """

    family: Family
    params: Mapping[str, float] = field(default_factory=dict)
    offset: float = 0.0

    def __post_init__(self) -> None:
        try:
            family = Family(self.family)
        except ValueError:
            raise SpecError(f"unknown family {self.family!r}") from None
        object.__setattr__(self, "family", family)

        allowed = _PARAMS[family]
        unknown = set(self.params) - set(allowed)
        if unknown:
            raise SpecError(
                f"unknown parameter(s) {sorted(unknown)} for family {family.value!r}"
            )
        merged = {**_DEFAULTS[family], **{k: float(v) for k, v in self.params.items()}}
        missing = [name for name in allowed if name not in merged]
        if missing:
            raise SpecError(f"family {family.value!r} requires {missing}")
        if not all(math.isfinite(v) for v in merged.values()):
            raise SpecError(f"non-finite parameter in {merged}")
        if not math.isfinite(float(self.offset)):
            raise SpecError(f"non-finite offset {self.offset!r}")
        object.__setattr__(self, "params", {name: merged[name] for name in allowed})
        object.__setattr__(self, "offset", float(self.offset))
        self._validate()

    def _validate(self) -> None:
        p = self.params
        match self.family:
            case Family.GAUSSIAN:
                if p["stddev"] <= 0:
                    raise SpecError(f"gaussian stddev must be > 0, got {p['stddev']}")
            case Family.EXPONENTIAL:
                if p["rate"] <= 0:
                    raise SpecError(f"exponential rate must be > 0, got {p['rate']}")
            case Family.PARETO:
                if p["a"] <= 0 or p["scale"] <= 0:
                    raise SpecError(f"pareto needs a > 0 and scale > 0, got {dict(p)}")
            case Family.BERNOULLI:
                if not 0 < p["p"] < 1:
                    raise SpecError(f"bernoulli p must lie in (0, 1), got {p['p']}")
                if p["high"] == p["low"]:
                    raise SpecError("bernoulli high_value and low_value must differ")
            case Family.UNIFORM:
                if not p["lo"] < p["hi"]:
                    raise SpecError(f"uniform needs lo < hi, got {dict(p)}")

    # -- Constructors --------------------------------------------------------

    @classmethod
    def gaussian(cls, mean: float = 0.0, stddev: float = 1.0, offset: float = 0.0) -> EnvSpec:
        return cls(Family.GAUSSIAN, {"mean": mean, "stddev": stddev}, offset)

    @classmethod
    def exponential(cls, rate: float = 1.0, offset: float = 0.0) -> EnvSpec:
        return cls(Family.EXPONENTIAL, {"rate": rate}, offset)

    @classmethod
    def pareto(cls, a: float, scale: float = 1.0, offset: float = 0.0) -> EnvSpec:
        return cls(Family.PARETO, {"a": a, "scale": scale}, offset)

    @classmethod
    def bernoulli(
        cls, p: float, high: float = 1.0, low: float = 0.0, offset: float = 0.0
    ) -> EnvSpec:
        return cls(Family.BERNOULLI, {"p": p, "high": high, "low": low}, offset)

    @classmethod
    def uniform(cls, lo: float = 0.0, hi: float = 1.0, offset: float = 0.0) -> EnvSpec:
        return cls(Family.UNIFORM, {"lo": lo, "hi": hi}, offset)

    @classmethod
    def degenerate(cls, value: float) -> EnvSpec:
        """Constant environment ``eta == value``.

        Only for exact identities in tests; JSON parsing and the CLI refuse it.
        """
        return cls(Family.CONSTANT, {"value": value}, 0.0)

    @property
    def is_degenerate(self) -> bool:
        return self.family is Family.CONSTANT

    # -- Serialization -------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": SCHEMA_VERSION,
            "family": self.family.value,
            "params": dict(self.params),
            "offset": self.offset,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EnvSpec:
        """Build from ``{"family": ..., "params": {...}, "offset": ...}``."""
        if not isinstance(data, Mapping):
            raise SpecError(f"spec must be a JSON object, got {type(data).__name__}")
        schema = data.get("schema", SCHEMA_VERSION)
        if schema != SCHEMA_VERSION:
            raise SpecError(f"unsupported spec schema {schema!r}")
        unknown = set(data) - {"schema", "family", "params", "offset"}
        if unknown:
            raise SpecError(f"unknown spec key(s) {sorted(unknown)}")
        if "family" not in data:
            raise SpecError("spec is missing 'family'")
        if data["family"] == Family.CONSTANT.value:
            raise SpecError("constant environments are not accepted as input")
        params = data.get("params", {})
        if not isinstance(params, Mapping):
            raise SpecError("'params' must be an object")
        return cls(data["family"], dict(params), data.get("offset", 0.0))

    @classmethod
    def from_json(cls, text: str) -> EnvSpec:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"spec is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def parse(cls, text: str) -> EnvSpec:
        """Accept either a preset name from :data:`PRESETS` or spec JSON."""
        text = text.strip()
        if text in PRESETS:
            return PRESETS[text]
        if text.startswith("{"):
            return cls.from_json(text)
        available = ", ".join(sorted(PRESETS))
        raise SpecError(f"unknown spec {text!r}; presets: {available}")

    # -- Sampling ------------------------------------------------------------

    def quantile(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms in (0, 1) to eta values through the inverse CDF."""
        u = np.asarray(u, dtype=np.float64)
        p = self.params
        match self.family:
            case Family.GAUSSIAN:
                x = p["mean"] + p["stddev"] * ndtri(u)
            case Family.EXPONENTIAL:
                x = -np.log1p(-u) / p["rate"]
            case Family.PARETO:
                x = p["scale"] * np.exp(-np.log(u) / p["a"])
            case Family.BERNOULLI:
                x = np.where(u < p["p"], p["high"], p["low"])
            case Family.UNIFORM:
                x = p["lo"] + (p["hi"] - p["lo"]) * u
            case Family.CONSTANT:
                x = np.full_like(u, p["value"])
        return x - self.offset

    def __str__(self) -> str:
        args = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        suffix = f", offset={self.offset:g}" if self.offset else ""
        return f"{self.family.value}({args}{suffix})"


PRESETS: dict[str, EnvSpec] = {
    "gauss": EnvSpec.gaussian(0.0, 1.0),
    "exp1": EnvSpec.exponential(1.0),
    "exp1c": EnvSpec.exponential(1.0, offset=1.0),
    "pareto4": EnvSpec.pareto(4.0),
    "pareto1.5": EnvSpec.pareto(1.5),
    "bern04": EnvSpec.bernoulli(0.4),
    "bern09": EnvSpec.bernoulli(0.9),
    "unif": EnvSpec.uniform(0.0, 1.0),
}


# ---------------------------------------------------------------------------
# Counter-based field
# ---------------------------------------------------------------------------

_SM_CONST = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)
_K_REPLICA = np.uint64(0xD2B74407B1CE6E93)
_K_STREAM = np.uint64(0xCA5A826395121157)
_K_TIME = np.uint64(0x9E3779B97F4A7C15)
_K_COORD = (
    np.uint64(0xBF58476D1CE4E5B9),
    np.uint64(0x94D049BB133111EB),
    np.uint64(0xD6E8FEB86659FD93),
)
_MASK64 = 0xFFFFFFFFFFFFFFFF
_TWO_M53 = 1.0 / float(1 << 53)


def _mix64(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps.
    z = z + _SM_CONST
    z = (z ^ (z >> np.uint64(30))) * _SM_M1
    z = (z ^ (z >> np.uint64(27))) * _SM_M2
    return z ^ (z >> np.uint64(31))


def _as_sites(sites: Any) -> np.ndarray:
    arr = np.asarray(sites, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"sites must be an (m, d) array, got shape {arr.shape}")
    return arr


def _site_uniforms(
    master_seed: int, replica_id: int, stream: int, j: int, sites: np.ndarray
) -> np.ndarray:
    """Uniforms in the open interval (0, 1), one per row of ``sites``."""
    with np.errstate(over="ignore"):
        head = np.array(
            [master_seed & _MASK64], dtype=np.uint64
        ) ^ (np.uint64(replica_id & _MASK64) * _K_REPLICA) ^ (
            np.uint64(stream & _MASK64) * _K_STREAM
        )
        head = _mix64(_mix64(head) ^ (np.uint64(j & _MASK64) * _K_TIME))
        h = np.broadcast_to(head, (sites.shape[0],)).copy()
        for k in range(sites.shape[1]):
            coord = np.ascontiguousarray(sites[:, k]).view(np.uint64)
            h = _mix64(h ^ (coord * _K_COORD[k % len(_K_COORD)]))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


class Environment(Protocol):
    """Anything that can produce the layer of site weights at time ``j``."""

    def layer(self, j: int, sites: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class EnvField:
    """Deterministic realization of the i.i.d. field eta(j, x).

    Parameters
    ----------
    spec:
        The environment law.
    master_seed:
        64-bit seed shared by all replicas of an experiment.
    replica_id:
        Index of the independent environment replica.
    """

    spec: EnvSpec
    master_seed: int
    replica_id: int = 0

    def __post_init__(self) -> None:
        if self.replica_id < 0:
            raise ValueError(f"replica_id must be >= 0, got {self.replica_id}")

    def uniforms(self, j: int, sites: Any, stream: int = 0) -> np.ndarray:
        return _site_uniforms(self.master_seed, self.replica_id, stream, j, _as_sites(sites))

    def layer(self, j: int, sites: Any) -> np.ndarray:
        """Site weights at time ``j`` for every row of ``sites``."""
        return self.spec.quantile(self.uniforms(j, sites))

    def resample_layer(
        self, j: int, sites: Any, draw: int, *, antithetic: bool = False
    ) -> np.ndarray:
        """A fresh layer independent of the realized one (Monte Carlo use).

        Draw ``k`` and its antithetic twin share uniforms ``u`` and ``1 - u``.
        """
        u = self.uniforms(j, sites, stream=draw + 1)
        return self.spec.quantile(1.0 - u if antithetic else u)

    def with_replica(self, replica_id: int) -> EnvField:
        return EnvField(self.spec, self.master_seed, replica_id)


class TabulatedField:
    """An explicit realization: listed ``(j, x)`` values, ``default`` elsewhere.

    Parameters
    ----------
    values:
        Map from ``(j, site_tuple)`` to eta.
    default:
        Value of every unlisted site.
    """

    def __init__(
        self,
        values: Mapping[tuple[int, tuple[int, ...]], float] | None = None,
        default: float = 0.0,
    ) -> None:
        self._values = {
            (int(j), tuple(int(c) for c in x)): float(v)
            for (j, x), v in (values or {}).items()
        }
        self.default = float(default)

    def layer(self, j: int, sites: Any) -> np.ndarray:
        arr = _as_sites(sites)
        return np.array(
            [self._values.get((j, tuple(row.tolist())), self.default) for row in arr],
            dtype=np.float64,
        )

    def __repr__(self) -> str:
        return f"TabulatedField({len(self._values)} sites, default={self.default})"


def sample_eta(field: Environment, j: int, x: Any) -> float:
    """The weight eta(j, x) of one site. Deterministic per field."""
    sites = np.asarray(x, dtype=np.int64).reshape(1, -1)
    return float(field.layer(j, sites)[0])


# ---------------------------------------------------------------------------
# Analytic metadata
# ---------------------------------------------------------------------------


def log_mgf(spec: EnvSpec, beta: float) -> float:
    """``lambda(beta) = ln Q(exp(beta * eta))``; ``math.inf`` when it diverges."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if beta == 0:
        return 0.0
    p = spec.params
    match spec.family:
        case Family.GAUSSIAN:
            base = beta * p["mean"] + 0.5 * (beta * p["stddev"]) ** 2
        case Family.EXPONENTIAL:
            if beta >= p["rate"]:
                return math.inf
            base = -math.log1p(-beta / p["rate"])
        case Family.PARETO:
            return math.inf
        case Family.BERNOULLI:
            base = float(
                np.logaddexp(
                    math.log(p["p"]) + beta * p["high"],
                    math.log1p(-p["p"]) + beta * p["low"],
                )
            )
        case Family.UNIFORM:
            width = p["hi"] - p["lo"]
            base = beta * p["hi"] + math.log(-math.expm1(-beta * width)) - math.log(beta * width)
        case Family.CONSTANT:
            base = beta * p["value"]
    return base - beta * spec.offset


def mgf_radius(spec: EnvSpec) -> float:
    """``R = sup{beta >= 0 : lambda(beta) < inf}``."""
    match spec.family:
        case Family.EXPONENTIAL:
            return spec.params["rate"]
        case Family.PARETO:
            return 0.0
        case _:
            return math.inf


def esssup(spec: EnvSpec) -> float:
    p = spec.params
    match spec.family:
        case Family.BERNOULLI:
            top = max(p["high"], p["low"])
        case Family.UNIFORM:
            top = p["hi"]
        case Family.CONSTANT:
            top = p["value"]
        case _:
            return math.inf
    return top - spec.offset


def atom_at_esssup(spec: EnvSpec) -> float:
    """``Q(eta = esssup(eta))``; zero for laws without a top atom."""
    p = spec.params
    match spec.family:
        case Family.BERNOULLI:
            return p["p"] if p["high"] > p["low"] else 1.0 - p["p"]
        case Family.CONSTANT:
            return 1.0
        case _:
            return 0.0


def mean(spec: EnvSpec) -> float:
    p = spec.params
    match spec.family:
        case Family.GAUSSIAN:
            m = p["mean"]
        case Family.EXPONENTIAL:
            m = 1.0 / p["rate"]
        case Family.PARETO:
            m = p["a"] * p["scale"] / (p["a"] - 1.0) if p["a"] > 1 else math.inf
        case Family.BERNOULLI:
            m = p["p"] * p["high"] + (1.0 - p["p"]) * p["low"]
        case Family.UNIFORM:
            m = 0.5 * (p["lo"] + p["hi"])
        case Family.CONSTANT:
            m = p["value"]
    return m - spec.offset


def variance(spec: EnvSpec) -> float:
    p = spec.params
    match spec.family:
        case Family.GAUSSIAN:
            return p["stddev"] ** 2
        case Family.EXPONENTIAL:
            return 1.0 / p["rate"] ** 2
        case Family.PARETO:
            a, s = p["a"], p["scale"]
            return s * s * a / ((a - 1.0) ** 2 * (a - 2.0)) if a > 2 else math.inf
        case Family.BERNOULLI:
            return p["p"] * (1.0 - p["p"]) * (p["high"] - p["low"]) ** 2
        case Family.UNIFORM:
            return (p["hi"] - p["lo"]) ** 2 / 12.0
        case Family.CONSTANT:
            return 0.0


def positive_moment_finite(spec: EnvSpec, order: float) -> bool:
    """Whether ``Q[(eta_+)^order] < inf``."""
    if spec.family is Family.PARETO:
        return order < spec.params["a"]
    return True


def lambda_over_radius(spec: EnvSpec) -> float:
    """``lambda(R) / R``, read as ``esssup(eta)`` when ``R = inf``."""
    radius = mgf_radius(spec)
    if math.isinf(radius):
        return esssup(spec)
    if radius == 0:
        return math.nan
    return log_mgf(spec, radius) / radius


@dataclass(frozen=True)
class ConditionReport:
    """Analytic verdicts on the integrability conditions of a law.

    Attributes
    ----------
    hyp1:
        Condition (1): ``int_0^inf (1 - F(x))^(1/(d+1)) dx < inf``.
    hyp2:
        Condition (2): ``Q|eta| < inf``.
    hyp3:
        Condition (4): ``int_{-inf}^0 F(x)^(1/(d+1)) dx < inf``.
    explodes:
        Condition (6): ``lambda(R)/R = inf``; False when ``R = 0``.
    theta_moment:
        Some ``theta > 1`` with ``Q|eta|^theta < inf`` (condition (7)), or None.
    R:
        Radius of the moment generating function.
    esssup:
        Essential supremum of eta.
    """

    hyp1: bool
    hyp2: bool
    hyp3: bool
    explodes: bool
    theta_moment: float | None
    R: float
    esssup: float

    @property
    def standing_ok(self) -> bool:
        return self.hyp1 and self.hyp2

    def failed(self) -> list[str]:
        """Names of the failed standing conditions."""
        names = []
        if not self.hyp1:
            names.append("(1)")
        if not self.hyp2:
            names.append("(2)")
        return names

    def to_dict(self) -> dict[str, Any]:
        return {
            "hyp1": self.hyp1,
            "hyp2": self.hyp2,
            "hyp3": self.hyp3,
            "explodes": self.explodes,
            "theta_moment": self.theta_moment,
            "R": self.R,
            "esssup": self.esssup,
        }


def check_conditions(spec: EnvSpec, d: int) -> ConditionReport:
    """Evaluate the integrability conditions from per-family tail facts.

    Exponential and gaussian tails beat any polynomial; bounded laws satisfy
    every tail integral; a pareto tail ``x^-a`` makes
    ``(1 - F)^(1/(d+1))`` integrable iff ``a / (d + 1) > 1``.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    radius = mgf_radius(spec)
    if spec.family is Family.PARETO:
        a = spec.params["a"]
        hyp1 = a / (d + 1) > 1
        hyp2 = a > 1
        theta = min(2.0, 0.5 * (1.0 + a)) if a > 1 else None
    else:
        hyp1 = hyp2 = True
        theta = 2.0
    # Every catalog law is bounded below or has a gaussian left tail.
    hyp3 = True
    explodes = radius > 0 and math.isinf(lambda_over_radius(spec))
    report = ConditionReport(
        hyp1=hyp1,
        hyp2=hyp2,
        hyp3=hyp3,
        explodes=explodes,
        theta_moment=theta,
        R=radius,
        esssup=esssup(spec),
    )
    logger.debug("conditions for %s, d=%d: %s", spec, d, report)
    return report


def require_standing(spec: EnvSpec, d: int) -> ConditionReport:
    """Return the report, raising :class:`ConditionError` if (1) or (2) fails."""
    report = check_conditions(spec, d)
    failed = report.failed()
    if failed:
        raise ConditionError(
            f"environment {spec} violates condition(s) {', '.join(failed)} in d={d}",
            failed,
        )
    return report
