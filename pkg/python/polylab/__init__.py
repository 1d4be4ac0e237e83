"""polylab: a directed polymer simulation lab.

Simulates a directed polymer in a random environment on ``Z^d``, computes
its free energy and endpoint distribution by a sparse transfer-matrix
recursion, and measures atom statistics against the bounds that relate
them.

Quick start::

    from polylab import EnvField, EnvSpec, evolve

    field = EnvField(EnvSpec.exponential(), master_seed=7)
    state = evolve(field, beta=0.5, n=200, d=1)
    print(state.log_z / 200)

Monte Carlo estimates::

    from polylab import estimate_p

    est = estimate_p(EnvSpec.gaussian(), 1.0, n=500, d=1, replicas=16, seed=7)
    print(est.mean, est.stderr)
"""

from __future__ import annotations

__version__ = "0.1.0"

from polylab.atoms import (
    AtomReport,
    AtomTracker,
    CesaroTrace,
    FixedEps,
    LogEps,
    PowerEps,
    atom_report,
    cesaro_statistics,
    parse_schedule,
)
from polylab.dp import brute_force_oracle, evolve, max_path_energy, truncated_evolve
from polylab.env import (
    EnvField,
    EnvSpec,
    Family,
    TabulatedField,
    check_conditions,
    esssup,
    log_mgf,
    mgf_radius,
    sample_eta,
)
from polylab.exceptions import (
    BudgetError,
    ConditionError,
    ConfigError,
    GridError,
    LogWeightOverflowError,
    NormalizationError,
    PolylabError,
    ProjectionError,
    SampleError,
    SpecError,
    SpecMismatchError,
    StreamOrderError,
    VerificationError,
)
from polylab.fenergy import (
    bound_check,
    estimate_alpha,
    estimate_p,
    gap_scan,
    lemma_dec_conditions,
    localization_bound,
    martingale_diagnostic,
    pathwise_bound_check,
)
from polylab.hooks import ObserverChain, observer
from polylab.options import ExperimentConfig
from polylab.simplex import (
    ConstraintSet,
    SampleBank,
    SimplexPoint,
    closed_form_minimizer,
    constrained_minimize,
    lemma_utile_check,
    mc_objective,
)
from polylab.types import LatticeSlice, PathStats, PolymerState

__all__ = [
    "__version__",
    # Environment
    "EnvField",
    "EnvSpec",
    "Family",
    "TabulatedField",
    "check_conditions",
    "esssup",
    "log_mgf",
    "mgf_radius",
    "sample_eta",
    # Recursion
    "evolve",
    "truncated_evolve",
    "max_path_energy",
    "brute_force_oracle",
    "LatticeSlice",
    "PolymerState",
    "PathStats",
    "ObserverChain",
    "observer",
    # Atoms
    "AtomReport",
    "AtomTracker",
    "CesaroTrace",
    "FixedEps",
    "LogEps",
    "PowerEps",
    "atom_report",
    "cesaro_statistics",
    "parse_schedule",
    # Free energy
    "estimate_p",
    "estimate_alpha",
    "bound_check",
    "gap_scan",
    "pathwise_bound_check",
    "lemma_dec_conditions",
    "martingale_diagnostic",
    "localization_bound",
    # Simplex
    "SimplexPoint",
    "ConstraintSet",
    "SampleBank",
    "closed_form_minimizer",
    "constrained_minimize",
    "mc_objective",
    "lemma_utile_check",
    # Config
    "ExperimentConfig",
    # Exceptions
    "PolylabError",
    "SpecError",
    "ConditionError",
    "BudgetError",
    "NormalizationError",
    "StreamOrderError",
    "GridError",
    "LogWeightOverflowError",
    "SpecMismatchError",
    "ProjectionError",
    "SampleError",
    "ConfigError",
    "VerificationError",
]
