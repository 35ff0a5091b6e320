"""
Assembles the JSON reports written by the ``relq`` command.

Every section of a report carries a ``status``:

* ``ok``: the section was computed,
* ``refused``: the mathematics refused, e.g. the pair (A, B) is not controllable,
* ``error``: anything else went wrong.

Failed sections also carry the ``error`` message and the ``module`` that raised it. The exit
code of a report is 1 when any section has an error, 2 when any section was refused and 0
otherwise.

Reports contain no timestamps, running the same model with the same configuration gives a
byte-identical report.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable
from typing import List
from typing import Optional
from typing import Sequence

import numpy as np

from relq.analysis import Trajectory
from relq.analysis import check_boundedness
from relq.analysis import covariance_comparison
from relq.analysis import identification_experiment_bk
from relq.analysis import identification_experiment_commitment
from relq.analysis import minimal_volatility_experiment
from relq.bk_solver import EquilibriumSet
from relq.bk_solver import solve_bk
from relq.bk_solver import solve_quasi_optimal
from relq.commitment import CommitmentSolution
from relq.commitment import build_history_rule
from relq.commitment import solve_commitment
from relq.commitment import time_inconsistency_probe
from relq.config import Tolerances
from relq.config import resolve
from relq.exceptions import Error
from relq.exceptions import InvalidInputError
from relq.exceptions import NoEquilibriumError
from relq.exceptions import RefusalError
from relq.model import ModelSpec
from relq.model import PolicyRule
from relq.model import deviation_modes
from relq.model import model_digest
from relq.model import validate_model
from relq.serialize import dumps
from relq.settings import Settings
from relq.spectral import controllability

logger = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_REFUSED = "refused"
STATUS_ERROR = "error"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REFUSED = 2


def schema_version() -> int:
    return int(Settings.load("Report").SCHEMA_VERSION)


def provenance(exc: BaseException) -> str:
    """Returns the name of the innermost relq module in the traceback of the exception."""
    module = type(exc).__module__
    tb = exc.__traceback__
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("relq"):
            module = name
        tb = tb.tb_next
    return module


def failure(exc: BaseException) -> dict:
    status = STATUS_REFUSED if isinstance(exc, RefusalError) else STATUS_ERROR
    return {"status": status, "error": str(exc), "module": provenance(exc)}


def run_section(name: str, func: Callable[[], dict]) -> dict:
    """Runs func and returns its content with status 'ok', or the failure."""
    try:
        content = func()
    except Exception as exc:
        section = failure(exc)
        if section["status"] == STATUS_ERROR:
            logger.error(f"Section {name} failed: {exc}", exc_info=exc)
        else:
            logger.warning(f"Section {name} refused: {exc}")
        return section
    return {"status": STATUS_OK, **content}


def _statuses(obj) -> List[str]:
    found = []
    if isinstance(obj, dict):
        if "status" in obj:
            found.append(obj["status"])
        for value in obj.values():
            found.extend(_statuses(value))
    elif isinstance(obj, list):
        for item in obj:
            found.extend(_statuses(item))
    return found


def exit_code_of(content: dict) -> int:
    statuses = _statuses(content)
    if STATUS_ERROR in statuses:
        return EXIT_ERROR
    if STATUS_REFUSED in statuses:
        return EXIT_REFUSED
    return EXIT_OK


@dataclass(frozen=True)
class Report:
    content: dict

    @property
    def exit_code(self) -> int:
        return exit_code_of(self.content)

    def dumps(self) -> str:
        return dumps(self.content)


# Parsing of command line vectors -----------------------------------------------------------------


def parse_vector(text: str, size: int = None, name: str = "vector") -> np.ndarray:
    """Parses a comma separated list of numbers, e.g. '0.7,0'."""
    try:
        values = np.array([float(item) for item in text.split(",")], dtype=float)
    except ValueError as exc:
        raise InvalidInputError(f"Invalid {name} {text!r}: {exc}") from exc
    if size is not None and len(values) != size:
        raise InvalidInputError(f"Expected {size} values for {name}, got {len(values)}")
    return values


def parse_rule(text: str, n: int, m: int) -> PolicyRule:
    """
    Parses a rule 'f1,...,f_{n+m}'. A list of n values is the restricted rule (F_1n, 0).
    """
    row = parse_vector(text, name="rule")
    if len(row) == n:
        row = np.concatenate([row, np.zeros(m)])
    if len(row) != n + m:
        raise InvalidInputError(f"A rule has {n} or {n + m} coefficients, got {len(row)} in {text!r}")
    return PolicyRule.from_row(row, n)


# Section content ---------------------------------------------------------------------------------


def rule_document(rule: PolicyRule) -> dict:
    return {"kind": rule.kind, "F_1n": rule.F_1n, "F_1m": rule.F_1m}


def equilibria_document(model: ModelSpec, rule: PolicyRule, tol: Tolerances, quasi_optimal: bool = True) -> dict:
    """
    The Blanchard-Kahn classification of the closed loop under the rule, with every admissible
    equilibrium and, optionally, the quasi-optimal rule on its manifold.

    Having no equilibrium is a classification result and is reported with status 'ok'.
    """
    try:
        equilibria = solve_bk(model, rule, tol)
    except NoEquilibriumError as exc:
        return {"rule": rule_document(rule), "case_label": "no_equilibrium", "message": str(exc), "equilibria": []}

    return {"rule": rule_document(rule), **equilibrium_set_document(model, equilibria, tol, quasi_optimal)}


def equilibrium_set_document(model: ModelSpec, equilibria: EquilibriumSet, tol: Tolerances, quasi_optimal: bool) -> dict:
    split = equilibria.split
    entries = []
    for solution in equilibria.solutions:
        entry = {
            "subset": solution.chosen_subset,
            "eigenvalues": solution.eigenvalues,
            "N": solution.N,
            "conditioning": solution.conditioning,
            "manifold_residual": solution.manifold_residual,
        }
        if quasi_optimal:
            entry["quasi_optimal"] = run_section(
                "quasi_optimal", lambda s=solution: _quasi_optimal_document(model, s, tol)
            )
        entries.append(entry)

    return {
        "case_label": equilibria.case_label,
        "n_S": split.n_S,
        "n_below_unit": split.n_below_unit,
        "threshold": split.threshold,
        "eigenvalues": split.eigenvalues,
        "borderline": split.borderline,
        "count_formula": equilibria.count_formula,
        "upper_bound": equilibria.upper_bound,
        "indeterminate": equilibria.indeterminate,
        "distinct_maps": equilibria.distinct_maps,
        "equilibria": entries,
        "rejected": [{"subset": subset, "reason": reason} for subset, reason in equilibria.rejected],
    }


def _quasi_optimal_document(model: ModelSpec, solution, tol: Tolerances) -> dict:
    result = solve_quasi_optimal(model, solution, tol)
    return {
        "F_reduced": result.F_reduced,
        "P_reduced": result.P_reduced,
        "rule": rule_document(result.rule),
        "closed_loop_eigenvalues": result.riccati.closed_loop_eigenvalues,
    }


def commitment_document(model: ModelSpec, sol: CommitmentSolution, tol: Tolerances) -> dict:
    content = {
        "P": sol.P,
        "F": sol.F,
        "Phi": sol.Phi,
        "q0_map": sol.q0_map,
        "P_mm_condition": sol.P_mm_condition,
        "foc_residual": sol.foc_residual,
        "riccati_iterations": sol.riccati.iterations,
        "riccati_method": sol.riccati.method,
        "riccati_residual": sol.riccati.residual,
        "closed_loop_eigenvalues": sol.riccati.closed_loop_eigenvalues,
        "T_closed": sol.T_closed,
    }
    content["Psi"] = run_section("history_rule", lambda: _history_rule_document(model, sol, tol))
    return content


def _history_rule_document(model: ModelSpec, sol: CommitmentSolution, tol: Tolerances) -> dict:
    psi = build_history_rule(sol, model, tol)
    return {
        "psi_r": psi.psi_r,
        "psi_k0": psi.psi_k0,
        "psi_k1": psi.psi_k1,
        "parameter_count": psi.parameter_count,
        "identified": psi.identified,
    }


def trajectory_summary(traj: Trajectory, beta: float, tol: Tolerances) -> dict:
    summary = {
        "label": traj.label,
        "horizon": traj.horizon,
        "discounted_loss": traj.discounted_loss,
        "growth_exponent": traj.growth_exponent,
        "divergent": traj.divergent,
    }
    if traj.horizon >= tol.min_boundedness_horizon:
        boundedness = check_boundedness(traj, beta, tol)
        summary["bound"] = boundedness.bound
        summary["bound_satisfied"] = boundedness.bound_satisfied
    else:
        summary["bound_satisfied"] = None
    return summary


def identification_bk_document(model: ModelSpec, rule: PolicyRule, horizon: int, k0, tol: Tolerances) -> dict:
    equilibria = solve_bk(model, rule, tol)
    if not equilibria.solutions:
        raise NoEquilibriumError(f"no admissible equilibrium for the rule {rule!r}")
    N = equilibria.solutions[0].N
    result = identification_experiment_bk(model, rule, N, horizon, k0, tol)
    return {
        "rule": rule_document(result.rule),
        "restricted_rule": rule_document(result.restricted_rule),
        "N": result.N,
        "r_path_difference": result.r_path_difference,
        "k_path_difference": result.k_path_difference,
        "manifold_residual": result.manifold_residual,
        "regressor_rank": result.regressor_rank,
        "rank_deficiency": result.rank_deficiency,
        "singular_values": result.singular_values,
        "observationally_equivalent": result.observationally_equivalent,
        "horizon": result.horizon,
    }


def identification_commitment_document(
    model: ModelSpec, sol: CommitmentSolution, horizon: int, k0, seed: Optional[int], tol: Tolerances
) -> dict:
    result = identification_experiment_commitment(model, sol, horizon, k0, seed, tol)
    return {
        "k0": result.k0,
        "attempts": result.attempts,
        "regressor_rank": result.regressor_rank,
        "full_rank": result.full_rank,
        "singular_values": result.singular_values,
        "Phi": result.Phi,
        "Phi_estimate": result.Phi_estimate,
        "max_error": result.max_error,
        "recovered": result.recovered,
        "horizon": result.horizon,
    }


def covariance_document(model: ModelSpec, horizon: int, k0, tol: Tolerances) -> dict:
    result = covariance_comparison(model, horizon, k0=k0, tol=tol)
    return {
        "measure": result.measure,
        "perturbation": result.perturbation,
        "N": result.N,
        "quasi_optimal": {
            "baseline_moments": result.bk_baseline_moments,
            "perturbed_moments": result.bk_perturbed_moments,
            "baseline_map": result.bk_baseline_map,
            "perturbed_map": result.bk_perturbed_map,
            "map_difference": result.bk_map_difference,
            "map_fixed": result.bk_map_fixed,
        },
        "commitment": {
            "baseline_moments": result.commitment_baseline_moments,
            "perturbed_moments": result.commitment_perturbed_moments,
            "baseline_map": result.commitment_baseline_map,
            "perturbed_map": result.commitment_perturbed_map,
            "map_difference": result.commitment_map_difference,
            "cross_moment_difference": result.commitment_cross_moment_difference,
            "sensitive": result.commitment_sensitive,
        },
    }


def minimal_volatility_document(model: ModelSpec, tol: Tolerances) -> dict:
    result = minimal_volatility_experiment(model, tol)
    return {
        "F": result.F,
        "open_loop_eigenvalues": result.open_loop_eigenvalues,
        "closed_loop_eigenvalues": result.closed_loop_eigenvalues,
        "mirror": {
            "passed": result.mirror.passed,
            "max_residual": result.mirror.max_residual,
            "pairs": [
                {"open_loop": pair.open_loop, "closed_loop": pair.closed_loop, "kind": pair.kind}
                for pair in result.mirror.pairs
            ],
        },
    }


def time_inconsistency_document(model: ModelSpec, sol: CommitmentSolution, horizon: int, k0, tol: Tolerances) -> dict:
    probe = time_inconsistency_probe(sol, model, tol.reset_time, k0, horizon, tol)
    return {
        "reset_time": probe.reset_time,
        "mu_q_at_reset": probe.mu_q_at_reset,
        "q_before": probe.q_before,
        "q_after": probe.q_after,
        "q_jump": probe.q_jump,
        "continuation_loss": probe.continuation_loss,
        "reset_loss": probe.reset_loss,
        "loss_difference": probe.loss_difference,
        "committed_bounded": probe.committed.bound_satisfied,
        "reset_bounded": probe.reset.bound_satisfied,
    }


def _require(sol: Optional[CommitmentSolution], exc: Optional[BaseException]) -> CommitmentSolution:
    if sol is None:
        category = RefusalError if isinstance(exc, RefusalError) else Error
        raise category(f"commitment solution unavailable: {exc}")
    return sol


# Reports -----------------------------------------------------------------------------------------


def report_header(model: ModelSpec) -> dict:
    return {
        "schema_version": schema_version(),
        "model_digest": model_digest(model),
        "model": {"n": model.n, "m": model.m, "beta": model.beta, "rho": model.rho, "labels": model.labels()},
    }


def build_analysis_report(
    model: ModelSpec,
    rules: Sequence[PolicyRule] = (),
    horizon: int = None,
    k0=None,
    seed: int = None,
    tol: Tolerances = None,
) -> Report:
    """
    Runs the full pipeline on the model: validation, controllability, commitment, the
    Blanchard-Kahn classification under the commitment-restricted rule and under the given rules,
    and the experiments.
    """
    tol = resolve(tol)
    horizon = tol.horizon if horizon is None else int(horizon)
    k0 = np.ones(model.n) if k0 is None else np.asarray(k0, dtype=float)

    content = report_header(model)

    def validation():
        report = validate_model(model, tol)
        return {"valid": report.valid, "violations": report.violations, "deviation_modes": deviation_modes(model)}

    def full_controllability():
        report = controllability(model.A, model.B, tol)
        return {"rank": report.rank, "full": report.full, "singular_values": report.singular_values}

    content["validation"] = run_section("validation", validation)
    content["controllability"] = run_section("controllability", full_controllability)

    commitment: Optional[CommitmentSolution] = None
    commitment_failure: Optional[BaseException] = None
    try:
        commitment = solve_commitment(model, tol)
    except Exception as exc:
        commitment_failure = exc
        content["commitment"] = failure(exc)
        logger.warning(f"Section commitment failed: {exc}")
    else:
        content["commitment"] = run_section("commitment", lambda: commitment_document(model, commitment, tol))

    def commitment_restricted():
        sol = _require(commitment, commitment_failure)
        rule = PolicyRule(sol.F[: model.n], np.zeros(model.m), kind="commitment_as_if")
        return equilibria_document(model, rule, tol)

    bk = [run_section("bk", commitment_restricted)]
    for rule in rules:
        bk.append(run_section("bk", lambda r=rule: equilibria_document(model, r, tol)))
    content["bk"] = bk

    def as_if_rule() -> PolicyRule:
        if rules:
            return rules[0]
        sol = _require(commitment, commitment_failure)
        return PolicyRule.from_row(sol.F, model.n, kind="commitment_as_if")

    experiments = {
        "identification_bk": run_section(
            "identification_bk", lambda: identification_bk_document(model, as_if_rule(), horizon, k0, tol)
        ),
        "identification_commitment": run_section(
            "identification_commitment",
            lambda: identification_commitment_document(
                model, _require(commitment, commitment_failure), horizon, k0, seed, tol
            ),
        ),
        "covariance": run_section("covariance", lambda: covariance_document(model, horizon, k0, tol)),
        "minimal_volatility": run_section("minimal_volatility", lambda: minimal_volatility_document(model, tol)),
        "time_inconsistency": run_section(
            "time_inconsistency",
            lambda: time_inconsistency_document(model, _require(commitment, commitment_failure), horizon, k0, tol),
        ),
    }
    content["experiments"] = experiments
    content["config"] = tol.as_dict()

    return Report(content)


def build_enumeration_report(model: ModelSpec, rule: PolicyRule, tol: Tolerances = None) -> Report:
    """
    Lists every equilibrium for a rule on the predetermined variables. Having no equilibrium is a
    refusal here.
    """
    tol = resolve(tol)
    content = report_header(model)

    def enumeration():
        if not rule.restricted:
            raise InvalidInputError(f"enumerate expects a rule with F_1m = 0, got {rule.F_1m.tolist()}")
        equilibria = solve_bk(model, rule, tol)
        return {"rule": rule_document(rule), **equilibrium_set_document(model, equilibria, tol, quasi_optimal=False)}

    content["bk"] = run_section("enumerate", enumeration)
    content["config"] = tol.as_dict()
    return Report(content)


def build_identification_report(
    model: ModelSpec, rules: Sequence[PolicyRule] = (), horizon: int = None, k0=None, seed: int = None,
    tol: Tolerances = None,
) -> Report:
    tol = resolve(tol)
    horizon = tol.horizon if horizon is None else int(horizon)
    k0 = np.ones(model.n) if k0 is None else np.asarray(k0, dtype=float)

    content = report_header(model)

    commitment: Optional[CommitmentSolution] = None
    commitment_failure: Optional[BaseException] = None
    try:
        commitment = solve_commitment(model, tol)
    except Exception as exc:
        commitment_failure = exc

    def as_if_rule() -> PolicyRule:
        if rules:
            return rules[0]
        sol = _require(commitment, commitment_failure)
        return PolicyRule.from_row(sol.F, model.n, kind="commitment_as_if")

    content["identification_bk"] = run_section(
        "identification_bk", lambda: identification_bk_document(model, as_if_rule(), horizon, k0, tol)
    )
    content["identification_commitment"] = run_section(
        "identification_commitment",
        lambda: identification_commitment_document(
            model, _require(commitment, commitment_failure), horizon, k0, seed, tol
        ),
    )
    content["config"] = tol.as_dict()
    return Report(content)
