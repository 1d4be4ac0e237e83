"""Command-line runner for polylab experiments.

Usage::

    polylab simulate --spec exp1 --beta 0 --n 100 --d 1 --replicas 4 --seed 7 --out runs/a
    polylab conditions --spec pareto1.5 --d 1
    polylab verify-suite oracle --scale quick

Each data command writes ``data.jsonl`` (one row per replica or step),
``summary.csv`` and ``manifest.json`` into ``--out``; without ``--out`` the
summary rows are printed as JSON lines. Exit status is 0 on success, 2 on a
rejected configuration and 3 when a verification fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any

from polylab import __version__, dp, fenergy, simplex
from polylab.atoms import AtomTracker, FixedEps, best_schedule, parse_schedule
from polylab.env import EnvField, EnvSpec, check_conditions, log_mgf, mgf_radius
from polylab.exceptions import (
    BudgetError,
    ConditionError,
    ConfigError,
    GridError,
    SpecError,
    VerificationError,
)
from polylab.hooks import ObserverChain, observer
from polylab.manifest import MANIFEST_NAME, JsonlWriter, RunManifest, canonical_json, write_csv
from polylab.options import ExperimentConfig
from polylab.pool import ReplicaPool
from polylab.verify import SUITES, verify_suite

logger = logging.getLogger(__name__)

__all__ = ["build_parser", "run_experiment", "main", "EXIT_OK", "EXIT_CONFIG", "EXIT_FAILED"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILED = 3


@dataclass
class CommandResult:
    """Rows produced by one subcommand.

    ``rows`` pairs each data row with its replica id (``None`` for rows that
    aggregate replicas).
    """

    rows: list[tuple[int | None, dict[str, Any]]] = field(default_factory=list)
    summary: list[dict[str, Any]] = field(default_factory=list)
    ok: bool = True


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _simulate(cfg: ExperimentConfig) -> CommandResult:
    est = fenergy.estimate_p(
        cfg.spec, cfg.beta, cfg.n, cfg.d, cfg.replicas, cfg.seed,
        threads=cfg.threads, memory_budget=cfg.memory_budget,
    )
    result = CommandResult()
    for replica, value in enumerate(est.values):
        result.rows.append((replica, {"beta": cfg.beta, "n": cfg.n, "d": cfg.d, "log_z": value * cfg.n, "p_n": value}))
    summary = est.to_dict()
    summary["spec"] = str(cfg.spec)
    summary["lambda"] = log_mgf(cfg.spec, cfg.beta)
    result.summary.append(summary)
    return result


def _scan(cfg: ExperimentConfig) -> CommandResult:
    scan = fenergy.gap_scan(cfg.spec, cfg.beta_grid, cfg.n, cfg.d, cfg.replicas, cfg.seed, threads=cfg.threads)
    result = CommandResult()
    for est in scan.estimates:
        for replica, value in enumerate(est.values):
            result.rows.append((replica, {"beta": est.beta, "n": cfg.n, "d": cfg.d, "p_n": value}))
    bracket = scan.beta_c_bracket
    for row in scan.rows():
        row["beta_c_lo"], row["beta_c_hi"] = bracket if bracket else ("", "")
        result.summary.append(row)
    return result


def _alpha(cfg: ExperimentConfig) -> CommandResult:
    est = fenergy.estimate_alpha(
        cfg.spec, cfg.n_list, cfg.d, cfg.replicas, cfg.seed,
        threads=cfg.threads, memory_budget=cfg.memory_budget,
    )
    result = CommandResult()
    for replica, values in enumerate(est.values):
        for n, value in zip(est.n_list, values):
            result.rows.append((replica, {"n": n, "d": cfg.d, "N_over_n": value}))
    for n, mean, stderr in zip(est.n_list, est.means, est.stderrs):
        result.summary.append({"kind": "alpha", "n": n, "mean": mean, "stderr": stderr, "biased_low": True})
    if cfg.beta is not None:
        p_est = fenergy.estimate_p(cfg.spec, cfg.beta, est.n, cfg.d, cfg.replicas, cfg.seed, threads=cfg.threads)
        report = fenergy.bound_check(p_est, est)
        result.summary.append({"kind": "bound", **report.to_dict()})
        result.ok = report.passed
    return result


def _atoms(cfg: ExperimentConfig) -> CommandResult:
    schedules = [parse_schedule(s) for s in cfg.eps] or [FixedEps(0.1)]

    def run(replica: int) -> tuple[AtomTracker, list[float]]:
        tracker = AtomTracker(schedules, cfg.delta, keep_reports=True)
        log_z: list[float] = []

        @observer(priority=-1)
        def free_energy(j: int, nu: Any, rho: Any, increment: float) -> None:
            log_z.append((log_z[-1] if log_z else 0.0) + increment)

        chain = ObserverChain().add(free_energy).add(tracker)
        dp.evolve(EnvField(cfg.spec, cfg.seed, replica), cfg.beta, cfg.n, cfg.d, chain, memory_budget=cfg.memory_budget)
        return tracker, log_z

    result = CommandResult()
    for replica, (tracker, log_z) in enumerate(ReplicaPool(cfg.threads).map(run, range(cfg.replicas))):
        result.rows.extend(
            (replica, {**report.to_dict(), "p_j": log_z[report.j - 1] / report.j}) for report in tracker.reports
        )
        best = best_schedule(tracker.traces).label
        for trace in tracker.traces:
            result.summary.append({"replica_id": replica, **trace.to_dict(), "best": trace.label == best})
    return result


def _fixed_eps(cfg: ExperimentConfig, default: float) -> float:
    if not cfg.eps:
        return default
    schedule = parse_schedule(cfg.eps[0])
    if not isinstance(schedule, FixedEps):
        raise ConfigError(f"{cfg.command} needs a fixed eps, got {cfg.eps[0]!r}")
    return schedule.eps


def _verify_lemma(cfg: ExperimentConfig) -> CommandResult:
    spec = cfg.spec or EnvSpec.exponential(offset=1.0)
    result = CommandResult()
    if cfg.lemma in ("atom_mass", "cap"):
        try:
            if cfg.lemma == "atom_mass":
                eps = _fixed_eps(cfg, 0.1)
                block = max(1, round((1 - cfg.delta) / eps))
                constraint = simplex.ConstraintSet.atom_mass(eps, cfg.delta, n=cfg.n or 2 * (block + 1))
            else:
                k = cfg.k or 4
                constraint = simplex.ConstraintSet.cap(1 / k, n=cfg.n or 2 * k)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        beta = 1.0 if cfg.beta is None else cfg.beta
        bank = simplex.SampleBank.from_spec(spec, beta, cfg.m, constraint.n, cfg.seed)
        report = simplex.closed_form_optimality(constraint, bank, cfg.trials, seed=cfg.seed)
        best = simplex.constrained_minimize(constraint, bank, cfg.restarts, seed=cfg.seed, threads=cfg.threads)
        distance = simplex.l1_distance_up_to_permutation(best.point, simplex.closed_form_minimizer(constraint))
        result.rows.append((None, {"check": "closed_form_optimality", **report.to_dict()}))
        result.rows.append((None, {"check": "constrained_minimize", **best.to_dict(), "l1_to_closed_form": distance}))
        result.ok = report.passed and distance <= 0.05
        result.summary.append(
            {"lemma": cfg.lemma, "constraint": str(constraint), "violations": report.violations,
             "l1_to_closed_form": distance, "passed": result.ok}
        )
    elif cfg.lemma == "utile":
        interval = tuple(cfg.interval) if cfg.interval else (0.5, min(2.0, 0.9 * mgf_radius(spec)))
        table = simplex.lemma_utile_check(spec, interval, cfg.n_list or [10, 100, 1000], cfg.m, cfg.seed)
        result.rows.extend((None, row.to_dict()) for row in table.rows)
        result.ok = table.nondecreasing() and table.converged()
        result.summary.append(
            {"lemma": "utile", "target": table.target, "last": table.rows[-1].value,
             "nondecreasing": table.nondecreasing(), "converged": table.converged(), "passed": result.ok}
        )
    elif cfg.lemma == "localization":
        beta = cfg.beta if cfg.beta is not None else 1.0
        n_list = cfg.n_list or [cfg.n or 100]
        alpha = fenergy.estimate_alpha(spec, n_list, cfg.d, max(cfg.replicas, 2), cfg.seed, threads=cfg.threads)
        p_est = fenergy.estimate_p(spec, beta, alpha.n, cfg.d, max(cfg.replicas, 2), cfg.seed, threads=cfg.threads)
        bound = fenergy.localization_bound(
            spec, beta, cfg.delta, cfg.k or 4, alpha.upper, cfg.m, cfg.seed, p=p_est.mean
        )
        result.rows.append((None, bound.to_dict()))
        result.summary.append({"lemma": "localization", "localization_budget": bound.bound_alpha, "favorite_budget": bound.bound_p})
    else:
        raise ConfigError(f"unknown lemma {cfg.lemma!r}")
    return result


def _martingale(cfg: ExperimentConfig) -> CommandResult:
    eps = _fixed_eps(cfg, 0.1)

    def run(replica: int) -> tuple[fenergy.MartingaleTrace, AtomTracker]:
        tracker = AtomTracker([FixedEps(eps)], cfg.delta)
        trace = fenergy.martingale_diagnostic(
            cfg.spec, cfg.beta, eps, cfg.delta, cfg.n, cfg.d, cfg.mc_layer_samples, cfg.seed,
            replica_id=replica, observer=tracker,
        )
        return trace, tracker

    result = CommandResult()
    for replica, (trace, tracker) in enumerate(ReplicaPool(cfg.threads).map(run, range(cfg.replicas))):
        result.rows.extend((replica, row) for row in trace.rows())
        result.summary.append(
            {"replica_id": replica, "n": trace.n, "M_over_n": trace.m_over_n[-1],
             "N_over_n": trace.n_over_n[-1], "mc_error": trace.mc_error[-1],
             "atom_mass_mean": tracker.traces[0].atom_mass_mean}
        )
    return result


def _oracle_check(cfg: ExperimentConfig) -> CommandResult:
    def run(replica: int) -> dict[str, Any]:
        field_ = EnvField(cfg.spec, cfg.seed, replica)
        oracle = dp.brute_force_oracle(field_, cfg.beta, cfg.n, cfg.d)
        nus: list[dict[tuple[int, ...], float]] = []
        state = dp.evolve(field_, cfg.beta, cfg.n, cfg.d, lambda j, nu, rho, inc: nus.append(nu.to_dict()))
        nu_err = max(
            abs(got.get(site, 0.0) - want.get(site, 0.0))
            for got, want in zip(nus, oracle.nu)
            for site in set(got) | set(want)
        )
        max_energy = dp.max_path_energy(field_, cfg.n, cfg.d).max_energy
        return {
            "log_z": state.log_z,
            "oracle_log_z": oracle.log_z,
            "log_z_err": abs(state.log_z - oracle.log_z),
            "nu_err": nu_err,
            "max_energy": max_energy,
            "oracle_max_energy": oracle.max_energy,
        }

    result = CommandResult()
    for replica, row in enumerate(ReplicaPool(cfg.threads).map(run, range(cfg.replicas))):
        result.rows.append((replica, row))
        if row["log_z_err"] > 1e-10 or row["nu_err"] > 1e-12 or abs(row["max_energy"] - row["oracle_max_energy"]) > 1e-10:
            result.ok = False
    result.summary.append({"replicas": cfg.replicas, "n": cfg.n, "d": cfg.d, "passed": result.ok})
    return result


def _conditions(cfg: ExperimentConfig) -> CommandResult:
    report = check_conditions(cfg.spec, cfg.d)
    dec = fenergy.lemma_dec_conditions(cfg.spec, cfg.d)
    row = {"spec": str(cfg.spec), "d": cfg.d, **report.to_dict(), "verdict": dec.verdict}
    return CommandResult(rows=[(None, {**row, "dec": dec.to_dict()})], summary=[row])


def _verify_suite(cfg: ExperimentConfig) -> CommandResult:
    report = verify_suite(cfg.suite, scale=cfg.scale, threads=cfg.threads)
    result = CommandResult(ok=report.passed)
    result.rows.extend((None, v.to_dict()) for v in report.verdicts)
    result.summary.extend({"name": v.name, "passed": v.passed} for v in report.verdicts)
    return result


_HANDLERS: dict[str, Callable[[ExperimentConfig], CommandResult]] = {
    "simulate": _simulate,
    "scan": _scan,
    "alpha": _alpha,
    "atoms": _atoms,
    "verify-lemma": _verify_lemma,
    "martingale": _martingale,
    "oracle-check": _oracle_check,
    "conditions": _conditions,
    "verify-suite": _verify_suite,
}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file of config values; flags take precedence")
    common.add_argument("--spec", help="preset name or spec JSON")
    common.add_argument("--d", type=int, help="lattice dimension (1-3)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads (POLYLAB_THREADS overrides)")
    common.add_argument("--memory-budget", dest="memory_budget", type=int, help="bytes per lattice slice")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="warnings only")

    parser = argparse.ArgumentParser(prog="polylab", description="Directed polymer simulation lab.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], help=help_text, argument_default=argparse.SUPPRESS)

    def beta(p: argparse.ArgumentParser) -> None:
        p.add_argument("--beta", type=float, help="inverse temperature")

    def horizon(p: argparse.ArgumentParser) -> None:
        p.add_argument("--n", type=int, help="horizon")

    def replicas(p: argparse.ArgumentParser) -> None:
        p.add_argument("--replicas", type=int, help="environment replicas")

    def atoms_opts(p: argparse.ArgumentParser) -> None:
        p.add_argument("--eps", nargs="+", help="thresholds: fixed:E, log:C or power:C,G")
        p.add_argument("--delta", type=float, help="atom mass level")

    p = command("simulate", "estimate the free energy p(beta)")
    beta(p), horizon(p), replicas(p)

    p = command("scan", "quenched-annealed gap along a beta grid")
    p.add_argument("--beta-grid", dest="beta_grid", nargs="+", type=float, help="increasing betas")
    horizon(p), replicas(p)

    p = command("alpha", "maximal path energy per step")
    p.add_argument("--n-list", dest="n_list", nargs="+", type=int, help="increasing horizons")
    beta(p), replicas(p)

    p = command("atoms", "epsilon-atom Cesaro statistics")
    beta(p), horizon(p), replicas(p), atoms_opts(p)

    p = command("verify-lemma", "Monte Carlo check of a simplex lemma")
    p.add_argument("--lemma", choices=("atom_mass", "cap", "utile", "localization"))
    p.add_argument("--k", type=int, help="cap size or block size")
    p.add_argument("--m", type=int, help="sample rows")
    p.add_argument("--interval", nargs=2, type=float, help="beta interval a b")
    p.add_argument("--n-list", dest="n_list", nargs="+", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--restarts", type=int)
    beta(p), horizon(p), replicas(p), atoms_opts(p)

    p = command("martingale", "martingale law-of-large-numbers diagnostic")
    p.add_argument("--mc-samples", dest="mc_layer_samples", type=int, help="fresh layers per step")
    beta(p), horizon(p), replicas(p), atoms_opts(p)

    p = command("oracle-check", "compare the recursion with path enumeration")
    beta(p), horizon(p), replicas(p)

    command("conditions", "integrability conditions of a law")

    p = command("verify-suite", "run an assertion suite")
    p.add_argument("suite", choices=(*SUITES, "all"))
    p.add_argument("--scale", choices=("quick", "full"))
    return parser


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


def _configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _load_config(args: dict[str, Any]) -> ExperimentConfig:
    path = args.pop("config", None)
    base = ExperimentConfig.load(path) if path else ExperimentConfig()
    cfg = base.merged(args).with_env()
    cfg.validate()
    return cfg


def _emit(cfg: ExperimentConfig, result: CommandResult, wall_time: float) -> None:
    if cfg.out is None:
        for row in result.summary:
            print(canonical_json(row))
        return
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    with JsonlWriter(out / "data.jsonl", config_hash=cfg.config_hash(), seed=cfg.seed) as writer:
        for replica, row in result.rows:
            writer.write({"command": cfg.command, **row}, replica_id=replica)
    summary = [{"config_hash": cfg.config_hash(), "seed": cfg.seed, **row} for row in result.summary]
    write_csv(out / "summary.csv", summary)
    RunManifest.build(out, cfg, wall_time=wall_time).write(out / MANIFEST_NAME)
    logger.info("wrote %d rows to %s", len(result.rows), out)


def run_experiment(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv``, run the subcommand and write its outputs; return the exit code."""
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    _configure_logging(args.pop("verbose", False), args.pop("quiet", False))

    start = time.perf_counter()
    try:
        cfg = _load_config(args)
        result = _HANDLERS[cfg.command](cfg)
        _emit(cfg, result, time.perf_counter() - start)
    except (ConfigError, ConditionError, SpecError, BudgetError, GridError) as exc:
        logger.debug("rejected configuration", exc_info=True)
        print(f"polylab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VerificationError as exc:
        print(f"polylab: verification failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    if not result.ok:
        print(f"polylab: {cfg.command} failed its checks", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def main() -> None:
    sys.exit(run_experiment())


if __name__ == "__main__":
    main()
