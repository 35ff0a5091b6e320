"""
Closed-loop simulation, boundedness, loss accounting and the identification and covariance
experiments.

A simulation iterates a `ClosedLoopLaw` on an internal state ``x``:

* `full_state_law`: ``x = (k, q)`` and ``x' = (A - B F) x``,
* `manifold_law`: ``x = k`` on the saddle path ``q = -N k``,
* `commitment_law`: ``x = (k, mu_q)`` and ``x' = T_closed x``.

Paths on a saddle manifold are iterated in the predetermined block only. Iterating the full
closed-loop matrix from a point on the manifold amplifies rounding errors along the unstable
directions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List
from typing import Optional
from typing import Tuple

import numpy as np
import pandas as pd

from relq.bk_solver import BKSolution
from relq.bk_solver import observational_equivalence
from relq.bk_solver import solve_bk
from relq.bk_solver import solve_quasi_optimal
from relq.commitment import CommitmentSolution
from relq.commitment import solve_commitment
from relq.config import Tolerances
from relq.config import resolve
from relq.exceptions import IdentificationRefused
from relq.exceptions import InvalidInputError
from relq.exceptions import NoEquilibriumError
from relq.model import BoundednessReport
from relq.model import ModelSpec
from relq.model import PolicyRule
from relq.model import to_levels
from relq.riccati import solve_dare
from relq.spectral import MirrorReport
from relq.spectral import eigenvalue_mirror_check
from relq.spectral import numerical_rank
from relq.spectral import spectral_split
from relq.system import Timer

logger = logging.getLogger(__name__)

MOMENT_LABEL = "equal-weight second moments of a deterministic trajectory over t in [0, T)"


@dataclass(frozen=True, eq=False)
class ClosedLoopLaw:
    transition: np.ndarray  # p x p
    observe: np.ndarray  # d x p, x -> (k, q) deviations
    instrument: np.ndarray  # p, x -> r - r*
    multiplier: Optional[np.ndarray] = None  # m x p, x -> mu_q
    loading: Optional[np.ndarray] = None  # p x kz, exogenous z_t
    label: str = "full_state"

    @property
    def dimension(self) -> int:
        return self.transition.shape[0]


def full_state_law(model: ModelSpec, rule: PolicyRule) -> ClosedLoopLaw:
    return ClosedLoopLaw(
        transition=model.closed_loop(rule),
        observe=np.eye(model.d),
        instrument=-rule.as_row(),
        loading=model.gamma,
        label="full_state",
    )


def manifold_law(model: ModelSpec, rule: PolicyRule, N) -> ClosedLoopLaw:
    """
    The closed loop on the manifold q = -N k. The rule is applied to (k, -N k), the exogenous
    term moves k only.
    """
    N = np.atleast_2d(np.asarray(N, dtype=float))
    if N.shape != (model.m, model.n):
        raise InvalidInputError(f"N must have shape ({model.m}, {model.n}), got {N.shape}")

    lift = np.vstack([np.eye(model.n), -N])
    return ClosedLoopLaw(
        transition=model.closed_loop(rule)[: model.n, :] @ lift,
        observe=lift,
        instrument=-rule.as_row() @ lift,
        loading=None if model.gamma is None else model.gamma[: model.n, :],
        label="manifold",
    )


def commitment_law(model: ModelSpec, sol: CommitmentSolution) -> ClosedLoopLaw:
    selector = np.hstack([np.zeros((sol.m, sol.n)), np.eye(sol.m)])
    return ClosedLoopLaw(
        transition=np.array(sol.T_closed),
        observe=np.array(sol.state_map),
        instrument=np.array(sol.Phi),
        multiplier=selector,
        loading=None if model.gamma is None else sol.multiplier_map @ model.gamma,
        label="commitment",
    )


@dataclass(frozen=True, eq=False)
class Trajectory:
    t: np.ndarray
    k: np.ndarray  # T x n
    q: np.ndarray  # T x m
    r: np.ndarray  # T, deviation r - r*
    mu_q: Optional[np.ndarray]  # T x m
    states: np.ndarray  # T x p
    terminal_state: np.ndarray  # x_T
    terminal_y: np.ndarray  # y_T
    discounted_loss: float
    growth_exponent: float
    divergent: bool
    label: str

    @property
    def horizon(self) -> int:
        return len(self.t)

    @property
    def y(self) -> np.ndarray:
        return np.hstack([self.k, self.q])

    def to_frame(self, labels: List[str] = None) -> pd.DataFrame:
        n, m = self.k.shape[1], self.q.shape[1]
        labels = labels or [f"k{i + 1}" for i in range(n)] + [f"q{i + 1}" for i in range(m)]

        columns = {"t": self.t}
        for idx, name in enumerate(labels[:n]):
            columns[name] = self.k[:, idx]
        for idx, name in enumerate(labels[n:]):
            columns[name] = self.q[:, idx]
        if self.mu_q is not None:
            for idx, name in enumerate(labels[n:]):
                columns[f"mu_{name}"] = self.mu_q[:, idx]
        columns["r"] = self.r

        return pd.DataFrame(columns)


def _growth_exponent(norms: np.ndarray) -> float:
    """Least-squares slope of log |y_t| over the last half of the horizon."""
    window = norms[len(norms) // 2:]
    if len(window) < 2:
        return float("nan")
    if np.any(window == 0.0):
        return float("-inf")
    slope, _ = np.polyfit(np.arange(len(window), dtype=float), np.log(window), 1)
    return float(slope)


def simulate(model: ModelSpec, law: ClosedLoopLaw, initial, T: int, tol: Tolerances = None, z_path=None) -> Trajectory:
    """
    Iterates the law for T periods from the initial state and records t = 0..T-1.

    The loss is ``sum_t beta^t (y_t' Q y_t + rho (r_t - r*)^2)``. When the state norm exceeds the
    divergence limit the trajectory is truncated and flagged divergent.

    Args:
        model: the model, for the loss weights and the exogenous path
        law: the closed-loop law
        initial: the initial internal state of the law
        T: the horizon, T >= 1
        tol: tolerances
        z_path: exogenous path (T x kz, a vector for kz = 1), defaults to model.z_path, used when the
            law has a loading
    """
    tol = resolve(tol)

    if T < 1:
        raise InvalidInputError(f"The horizon must be at least 1, got {T}")

    x = np.asarray(initial, dtype=float).ravel()
    if x.shape != (law.dimension,):
        raise InvalidInputError(f"Expected an initial state of dimension {law.dimension}, got {x.shape[0]}")

    if z_path is None:
        z_path = model.z_path
    else:
        z_path = np.asarray(z_path, dtype=float)
        if z_path.ndim == 1:
            z_path = z_path.reshape(-1, 1)
    use_z = law.loading is not None and z_path is not None
    if use_z:
        if z_path.ndim != 2 or z_path.shape[1] != law.loading.shape[1]:
            raise InvalidInputError(
                f"The exogenous path must have {law.loading.shape[1]} column(s), got shape {z_path.shape}"
            )
        if len(z_path) < T:
            raise InvalidInputError(f"The exogenous path has {len(z_path)} periods, the horizon is {T}")

    states = []
    divergent = False
    for t in range(T):
        states.append(x)
        x_next = law.transition @ x
        if use_z:
            x_next = x_next + law.loading @ z_path[t]
        x = x_next
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > tol.divergence_norm:
            divergent = True
            logger.warning(f"Trajectory '{law.label}' diverged at t={t + 1}, truncating")
            break

    states = np.array(states)
    y = states @ law.observe.T
    r = states @ law.instrument
    mu_q = None if law.multiplier is None else states @ law.multiplier.T

    discount = model.beta ** np.arange(len(states))
    period_loss = np.einsum("ti,ij,tj->t", y, model.Q, y) + model.rho * r ** 2
    norms = np.linalg.norm(y, axis=1)

    return Trajectory(
        t=np.arange(len(states)),
        k=y[:, : model.n],
        q=y[:, model.n:],
        r=r,
        mu_q=mu_q,
        states=states,
        terminal_state=x,
        terminal_y=law.observe @ x,
        discounted_loss=float(discount @ period_loss),
        growth_exponent=float("inf") if divergent else _growth_exponent(norms),
        divergent=divergent,
        label=law.label,
    )


def check_boundedness(traj: Trajectory, beta: float, tol: Tolerances = None) -> BoundednessReport:
    """
    Returns whether the growth exponent of the trajectory stays below log(1/sqrt(beta)) by at
    least the stability margin.
    """
    tol = resolve(tol)

    if traj.horizon < tol.min_boundedness_horizon:
        raise InvalidInputError(
            f"Boundedness needs a trajectory of at least {tol.min_boundedness_horizon} periods, got {traj.horizon}"
        )

    bound = float(np.log(1.0 / np.sqrt(beta)))
    satisfied = (not traj.divergent) and traj.growth_exponent < bound - tol.stability_margin

    return BoundednessReport(
        growth_exponent=traj.growth_exponent, bound_satisfied=bool(satisfied), bound=bound, horizon=traj.horizon
    )


def sample_moments(traj: Trajectory) -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns the second moment matrix (1/T) sum_t y_t y_t' of (k, q) and the implied linear map
    q = M_qk M_kk^-1 k.
    """
    y = traj.y
    n = traj.k.shape[1]
    moments = y.T @ y / len(y)
    M_kk, M_qk = moments[:n, :n], moments[n:, :n]
    linear_map = np.linalg.lstsq(M_kk.T, M_qk.T, rcond=None)[0].T
    return moments, linear_map


def export_csv(traj: Trajectory, path: str | Path, labels: List[str] = None, model: ModelSpec = None):
    """
    Writes the trajectory with 17 significant digits, one row per period. With a model, level
    columns are added for the state and the instrument.
    """
    frame = traj.to_frame(labels)
    if model is not None:
        levels = to_levels(model, traj.y)
        names = labels or model.labels()
        for idx, name in enumerate(names):
            frame[f"{name}_level"] = levels[:, idx]
        frame["r_level"] = traj.r + model.r_star
    frame.to_csv(path, index=False, float_format="%.17g")


# Identification ----------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BKIdentificationReport:
    rule: PolicyRule
    restricted_rule: PolicyRule
    N: np.ndarray
    r_path_difference: float
    k_path_difference: float
    manifold_residual: float
    regressor_rank: int
    rank_deficiency: int
    singular_values: np.ndarray
    observationally_equivalent: bool
    horizon: int


def identification_experiment_bk(
    model: ModelSpec, rule_a: PolicyRule, N, T: int = None, k0=None, tol: Tolerances = None
) -> BKIdentificationReport:
    """
    Compares the rule (F_1n, F_1m) with its restricted counterpart (F_1n - F_1m N, 0) on the
    manifold q = -N k: both give the same instrument path, and the regressors (k_t, q_t) have
    rank n, so F_1m can not be recovered from the data.
    """
    tol = resolve(tol)
    T = tol.horizon if T is None else int(T)
    N = np.atleast_2d(np.asarray(N, dtype=float))
    k0 = np.ones(model.n) if k0 is None else np.asarray(k0, dtype=float)

    if rule_a.restricted:
        logger.info("The rule does not respond to q, the restricted rule is the same rule.")

    rule_b = observational_equivalence(rule_a, N)

    path_a = simulate(model, manifold_law(model, rule_a, N), k0, T, tol)
    path_b = simulate(model, manifold_law(model, rule_b, N), k0, T, tol)

    # instrument values from the rules applied to the recorded data
    r_a = -(path_a.k @ rule_a.F_1n) - (path_a.q @ rule_a.F_1m)
    r_b = -(path_b.k @ rule_b.F_1n) - (path_b.q @ rule_b.F_1m)

    length = min(path_a.horizon, path_b.horizon)
    r_difference = float(np.max(np.abs(r_a[:length] - r_b[:length])))
    k_difference = float(np.max(np.abs(path_a.k[:length] - path_b.k[:length])))
    residual = float(np.max(np.abs(path_a.q + path_a.k @ N.T)))

    rank, singular_values = numerical_rank(path_a.y, tol.rank_rtol)

    scale = max(1.0, float(np.max(np.abs(r_a))))
    equivalent = r_difference <= tol.path_identity * scale

    logger.info(f"BK identification: |r_a - r_b| = {r_difference:.3g}, regressor rank {rank} of {model.d}")

    return BKIdentificationReport(
        rule=rule_a,
        restricted_rule=rule_b,
        N=N,
        r_path_difference=r_difference,
        k_path_difference=k_difference,
        manifold_residual=residual,
        regressor_rank=rank,
        rank_deficiency=model.d - rank,
        singular_values=singular_values,
        observationally_equivalent=equivalent,
        horizon=length,
    )


@dataclass(frozen=True, eq=False)
class CommitmentIdentificationReport:
    k0: np.ndarray
    attempts: int
    regressor_rank: int
    full_rank: bool
    singular_values: np.ndarray
    Phi: np.ndarray
    Phi_estimate: Optional[np.ndarray]
    max_error: Optional[float]
    recovered: bool
    horizon: int


def identification_experiment_commitment(
    model: ModelSpec, sol: CommitmentSolution, T: int = None, k0=None, seed: int = None, tol: Tolerances = None
) -> CommitmentIdentificationReport:
    """
    Simulates the commitment path from (k0, mu_q = 0) and regresses r_t on (k_t, mu_q,t). The
    regressors must have full rank n + m before the least squares fit; a rank deficient start is
    retried with a perturbed k0.

    Raises:
        IdentificationRefused: when k0 = 0, which gives a zero path.
    """
    tol = resolve(tol)
    T = tol.horizon if T is None else int(T)
    k0 = np.ones(model.n) if k0 is None else np.asarray(k0, dtype=float).ravel()
    rng = np.random.default_rng(tol.seed if seed is None else seed)

    if not np.any(k0):
        raise IdentificationRefused("k0 = 0 gives a zero path, nothing can be identified")

    law = commitment_law(model, sol)
    d = model.d

    for attempt in range(1, tol.retries + 2):
        traj = simulate(model, law, sol.initial_state(k0), T, tol)
        regressors = np.hstack([traj.k, traj.mu_q])
        rank, singular_values = numerical_rank(regressors, tol.rank_rtol)
        if rank == d:
            break
        logger.warning(f"Regressors have rank {rank} < {d} for k0 = {k0.tolist()}, retrying with a perturbed k0")
        k0 = k0 + 0.1 * max(1.0, float(np.max(np.abs(k0)))) * rng.standard_normal(model.n)
    else:
        return CommitmentIdentificationReport(
            k0=k0,
            attempts=tol.retries + 1,
            regressor_rank=rank,
            full_rank=False,
            singular_values=singular_values,
            Phi=np.array(sol.Phi),
            Phi_estimate=None,
            max_error=None,
            recovered=False,
            horizon=traj.horizon,
        )

    estimate = np.linalg.lstsq(regressors, traj.r, rcond=None)[0]
    error = float(np.max(np.abs(estimate - sol.Phi)))

    logger.info(f"Commitment identification: Phi recovered with error {error:.3g} after {attempt} attempt(s)")

    return CommitmentIdentificationReport(
        k0=k0,
        attempts=attempt,
        regressor_rank=rank,
        full_rank=True,
        singular_values=singular_values,
        Phi=np.array(sol.Phi),
        Phi_estimate=estimate,
        max_error=error,
        recovered=error <= tol.placement,
        horizon=traj.horizon,
    )


# Covariances -------------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CovarianceReport:
    perturbation: float
    N: np.ndarray
    bk_baseline_moments: np.ndarray
    bk_perturbed_moments: np.ndarray
    bk_baseline_map: np.ndarray
    bk_perturbed_map: np.ndarray
    bk_map_difference: float
    commitment_baseline_moments: np.ndarray
    commitment_perturbed_moments: np.ndarray
    commitment_baseline_map: np.ndarray
    commitment_perturbed_map: np.ndarray
    commitment_map_difference: float
    commitment_cross_moment_difference: float
    bk_map_fixed: bool
    commitment_sensitive: bool
    measure: str = MOMENT_LABEL


def default_equilibrium(model: ModelSpec, tol: Tolerances = None) -> BKSolution:
    """Returns the first admissible equilibrium of the open loop, i.e. under F = 0."""
    equilibria = solve_bk(model, PolicyRule.zero(model.n, model.m), tol)
    if not equilibria.solutions:
        raise NoEquilibriumError("The open loop has no admissible equilibrium")
    return equilibria.solutions[0]


def covariance_comparison(
    model: ModelSpec, T: int = None, N=None, perturbation: float = None, k0=None, tol: Tolerances = None
) -> CovarianceReport:
    """
    Compares the sample second moments of (k, q) under the quasi-optimal and the commitment
    solutions, for the model and for the model with `perturbation` added to Q_nm and Q_mn.

    The quasi-optimal solutions keep q = -N k whatever the loss weights, the commitment
    solutions change the relation between k and q.
    """
    tol = resolve(tol)
    T = tol.horizon if T is None else int(T)
    perturbation = tol.perturbation if perturbation is None else float(perturbation)
    k0 = np.ones(model.n) if k0 is None else np.asarray(k0, dtype=float)

    if N is None:
        N = default_equilibrium(model, tol).N
    N = np.atleast_2d(np.asarray(N, dtype=float))

    perturbed = model.perturb_cross_weights(perturbation)

    with Timer("covariance comparison"):
        bk_moments = []
        for variant in (model, perturbed):
            solution = solve_quasi_optimal(variant, N, tol)
            traj = simulate(variant, manifold_law(variant, solution.rule, N), k0, T, tol)
            bk_moments.append(sample_moments(traj))

        commitment_moments = []
        for variant in (model, perturbed):
            solution = solve_commitment(variant, tol)
            traj = simulate(variant, commitment_law(variant, solution), solution.initial_state(k0), T, tol)
            commitment_moments.append(sample_moments(traj))

    (bk_a, map_a), (bk_b, map_b) = bk_moments
    (com_c, map_c), (com_d, map_d) = commitment_moments
    n = model.n

    bk_difference = float(np.max(np.abs(map_a - map_b)))
    commitment_difference = float(np.max(np.abs(map_c - map_d)))
    cross_difference = float(np.max(np.abs(com_c[n:, :n] - com_d[n:, :n])))

    return CovarianceReport(
        perturbation=perturbation,
        N=N,
        bk_baseline_moments=bk_a,
        bk_perturbed_moments=bk_b,
        bk_baseline_map=map_a,
        bk_perturbed_map=map_b,
        bk_map_difference=bk_difference,
        commitment_baseline_moments=com_c,
        commitment_perturbed_moments=com_d,
        commitment_baseline_map=map_c,
        commitment_perturbed_map=map_d,
        commitment_map_difference=commitment_difference,
        commitment_cross_moment_difference=cross_difference,
        bk_map_fixed=bk_difference < tol.path_identity,
        commitment_sensitive=cross_difference > tol.moment_change,
    )


# Minimal volatility ------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MinimalVolatilityReport:
    F: np.ndarray
    open_loop_eigenvalues: np.ndarray
    closed_loop_eigenvalues: np.ndarray
    mirror: MirrorReport


def minimal_volatility_experiment(model: ModelSpec, tol: Tolerances = None) -> MinimalVolatilityReport:
    """
    Solves the problem with Q = 0, where only the instrument volatility is penalised. The rule
    leaves the stable open-loop eigenvalues in place and mirrors the unstable ones.
    """
    tol = resolve(tol)

    riccati = solve_dare(model.A, model.B, np.zeros_like(model.Q), model.rho, model.beta, tol)
    open_loop = spectral_split(model.A, model.beta, tol)
    closed_loop = spectral_split(model.A - model.B @ riccati.F[np.newaxis, :], model.beta, tol)

    return MinimalVolatilityReport(
        F=riccati.F,
        open_loop_eigenvalues=open_loop.eigenvalues,
        closed_loop_eigenvalues=closed_loop.eigenvalues,
        mirror=eigenvalue_mirror_check(open_loop, closed_loop, tol),
    )
