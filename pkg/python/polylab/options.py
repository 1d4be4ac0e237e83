"""Experiment configuration for the polylab runner.

Provides the ``ExperimentConfig`` dataclass holding every parameter a
subcommand may use. Values come from, lowest precedence first: field
defaults, a JSON file (``--config``), command-line flags, and the
``POLYLAB_THREADS`` environment variable for the thread count.
"""

from __future__ import annotations

import dataclasses
import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from polylab.dp import DEFAULT_MEMORY_BUDGET, MAX_DIMENSION
from polylab.env import EnvSpec, require_standing
from polylab.exceptions import ConfigError, SpecError
from polylab.manifest import canonical_json, sha256_text
from polylab.pool import resolve_threads

__all__ = ["ExperimentConfig", "COMMANDS", "STOCHASTIC_COMMANDS"]

COMMANDS = (
    "simulate",
    "scan",
    "alpha",
    "atoms",
    "verify-lemma",
    "martingale",
    "oracle-check",
    "conditions",
    "verify-suite",
)
STOCHASTIC_COMMANDS = frozenset(COMMANDS) - {"conditions", "verify-suite"}
SUITE_NAMES = ("oracle", "bounds", "lemmas", "localization", "all")

# Fields that do not change any data value.
_UNHASHED = frozenset({"threads", "out"})


@dataclass
class ExperimentConfig:
    """All parameters of one run.

    Parameters
    ----------
    command:
        Subcommand name, one of :data:`COMMANDS`.
    spec:
        Environment law.
    beta, beta_grid:
        Inverse temperature, or a strictly increasing grid of them.
    n, n_list:
        Horizon, or an increasing list of horizons.
    d:
        Lattice dimension, 1 to 3.
    replicas:
        Number of independent environment replicas.
    eps:
        Atom thresholds as schedule strings (``fixed:0.1``, ``log:1``,
        ``power:0.5,0.5``).
    delta:
        Mass level of the atom event.
    seed:
        Master seed; required by every command that draws randomness.
    out:
        Output directory. Nothing is written when unset.
    memory_budget:
        Byte limit for one lattice slice.
    threads:
        Worker threads over replicas.
    mc_layer_samples:
        Fresh layers per step in the martingale diagnostic.
    m:
        Monte Carlo sample rows for simplex checks.
    lemma:
        Which lemma ``verify-lemma`` checks: ``atom_mass``, ``cap``,
        ``utile`` or ``localization``.
    k:
        Cap size for ``lemma=cap`` and block size ``c`` for ``localization``.
    interval:
        ``[a, b]`` for the averaged-moment limit.
    trials:
        Random feasible points compared with the closed form.
    restarts:
        Random starts of the constrained minimizer.
    suite, scale:
        Suite name and size for ``verify-suite``.
    """

    command: str = "simulate"
    spec: EnvSpec | None = None
    beta: float | None = None
    beta_grid: list[float] = field(default_factory=list)
    n: int | None = None
    n_list: list[int] = field(default_factory=list)
    d: int = 1
    replicas: int = 16
    eps: list[str] = field(default_factory=list)
    delta: float = 0.5
    seed: int | None = None
    out: Path | None = None
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    threads: int = 1
    mc_layer_samples: int = 128
    m: int = 100_000
    lemma: str | None = None
    k: int | None = None
    interval: list[float] = field(default_factory=list)
    trials: int = 200
    restarts: int = 8
    suite: str | None = None
    scale: str = "quick"

    # -- Loading -------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ExperimentConfig:
        """Build from a JSON object; unknown keys are rejected."""
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        values = dict(data)
        if "spec" in values and values["spec"] is not None:
            values["spec"] = _coerce_spec(values["spec"])
        if values.get("out") is not None:
            values["out"] = Path(values["out"])
        return cls(**values)

    @classmethod
    def load(cls, path: Path | str) -> ExperimentConfig:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {str(path)!r}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {str(path)!r} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {str(path)!r} must hold a JSON object")
        return cls.from_dict(data)

    def merged(self, overrides: Mapping[str, Any]) -> ExperimentConfig:
        """A copy with every non-None override applied."""
        values = {k: v for k, v in overrides.items() if v is not None}
        names = {f.name for f in dataclasses.fields(self)}
        unknown = set(values) - names
        if unknown:
            raise ConfigError(f"unknown option(s): {sorted(unknown)}")
        if "spec" in values:
            values["spec"] = _coerce_spec(values["spec"])
        if "out" in values:
            values["out"] = Path(values["out"])
        return dataclasses.replace(self, **values)

    def with_env(self) -> ExperimentConfig:
        """Apply ``POLYLAB_THREADS``."""
        try:
            threads = resolve_threads(self.threads)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return dataclasses.replace(self, threads=threads)

    # -- Validation ----------------------------------------------------------

    def validate(self) -> None:
        """Raise :class:`ConfigError` or :class:`ConditionError` on a bad config."""
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.command == "verify-suite":
            if self.suite not in SUITE_NAMES:
                raise ConfigError(f"verify-suite needs a suite from {list(SUITE_NAMES)}, got {self.suite!r}")
            if self.scale not in ("quick", "full"):
                raise ConfigError(f"scale must be 'quick' or 'full', got {self.scale!r}")
            return
        if self.d not in range(1, MAX_DIMENSION + 1):
            raise ConfigError(f"d must be 1, 2 or 3, got {self.d}")
        if self.memory_budget <= 0:
            raise ConfigError(f"memory_budget must be positive, got {self.memory_budget}")
        if self.command in STOCHASTIC_COMMANDS and self.seed is None:
            raise ConfigError(f"{self.command} needs an explicit --seed")
        if self.spec is None:
            if self.command == "verify-lemma" and self.lemma in ("atom_mass", "cap"):
                return
            raise ConfigError(f"{self.command} needs --spec")
        require_standing(self.spec, self.d)
        self._validate_command()

    def _validate_command(self) -> None:
        need: dict[str, tuple[str, ...]] = {
            "simulate": ("beta", "n"),
            "scan": ("beta_grid", "n"),
            "alpha": ("n_list",),
            "atoms": ("beta", "n"),
            "martingale": ("beta", "n"),
            "oracle-check": ("beta", "n"),
        }
        missing = [name for name in need.get(self.command, ()) if not getattr(self, name)]
        # beta = 0 is a valid value
        missing = [name for name in missing if not (name == "beta" and self.beta == 0)]
        if missing:
            raise ConfigError(f"{self.command} needs {', '.join('--' + m.replace('_', '-') for m in missing)}")
        if self.beta is not None and self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.command in ("simulate", "scan", "alpha") and self.replicas < 2:
            raise ConfigError(f"{self.command} needs replicas >= 2, got {self.replicas}")
        if self.command == "verify-lemma" and self.lemma is None:
            raise ConfigError("verify-lemma needs --lemma")
        if self.command == "martingale" and self.mc_layer_samples < 100:
            raise ConfigError(f"martingale needs mc_layer_samples >= 100, got {self.mc_layer_samples}")
        if self.replicas < 1:
            raise ConfigError(f"replicas must be >= 1, got {self.replicas}")

    # -- Serialization -------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        """Fields that differ from their defaults, JSON-ready."""
        defaults = ExperimentConfig()
        result: dict[str, Any] = {"command": self.command}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "command" or value == getattr(defaults, f.name):
                continue
            if isinstance(value, EnvSpec):
                value = value.to_dict()
            elif isinstance(value, Path):
                value = str(value)
            result[f.name] = value
        return result

    def config_hash(self) -> str:
        """SHA-256 over the fields that can change a data value."""
        data = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        return sha256_text(canonical_json(data))


def _coerce_spec(value: Any) -> EnvSpec:
    if isinstance(value, EnvSpec):
        return value
    if isinstance(value, Mapping):
        return EnvSpec.from_dict(value)
    if isinstance(value, str):
        return EnvSpec.parse(value)
    raise SpecError(f"cannot read a spec from {type(value).__name__}")
