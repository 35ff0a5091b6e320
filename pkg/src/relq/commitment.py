"""
The commitment (Ramsey) solution.

The problem is first solved *as if* the non-predetermined variables were predetermined, which is
an ordinary discounted regulator problem with solution ``P`` and gain ``F``. The Lagrange
multipliers of the state are ``mu_t = P y_t``. Partitioning ``P`` gives the jump variables as a
function of the truly predetermined state ``(k_t, mu_q,t)``:

    q_t = -P_mm^-1 P_mn k_t + P_mm^-1 mu_q,t

and with ``mu_q,0 = 0`` the initial jump ``q_0 = -P_mm^-1 P_mn k_0`` is determinate.

The rule on ``(k, mu_q)`` is ``r_t - r* = Phi (k_t, mu_q,t)`` with ``Phi = -F S``, where ``S`` maps
``(k, mu_q)`` to ``(k, q)``. For a single jump variable the multiplier can be eliminated, which
gives the history dependent rule on ``(r_{t-1}, k_t, k_{t-1})``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from relq.config import Tolerances
from relq.config import resolve
from relq.decorators import log_refusal
from relq.exceptions import InternalConsistencyError
from relq.exceptions import InvalidInputError
from relq.exceptions import NotControllableError
from relq.exceptions import RepeatedTargetsError
from relq.exceptions import SingularMultiplierBlockError
from relq.exceptions import UnsupportedError
from relq.model import BoundednessReport
from relq.model import ModelSpec
from relq.riccati import RiccatiSolution
from relq.riccati import loss_of_state
from relq.riccati import solve_dare
from relq.spectral import ControllabilityReport
from relq.spectral import controllability
from relq.spectral import controllability_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CommitmentSolution:
    P: np.ndarray
    F: np.ndarray
    Phi: np.ndarray
    T_closed: np.ndarray
    q0_map: np.ndarray
    P_mm_condition: float
    state_map: np.ndarray  # S: (k, mu_q) -> (k, q)
    multiplier_map: np.ndarray  # L: (k, q) -> (k, mu_q)
    riccati: RiccatiSolution
    foc_residual: float
    n: int
    m: int
    controllability: Optional[ControllabilityReport] = None

    @property
    def P_nn(self):
        return self.P[: self.n, : self.n]

    @property
    def P_nm(self):
        return self.P[: self.n, self.n:]

    @property
    def P_mn(self):
        return self.P[self.n:, : self.n]

    @property
    def P_mm(self):
        return self.P[self.n:, self.n:]

    @property
    def Phi_k(self) -> np.ndarray:
        return self.Phi[: self.n]

    @property
    def Phi_mu(self) -> np.ndarray:
        return self.Phi[self.n:]

    def initial_state(self, k0, mu_q0=None) -> np.ndarray:
        """Returns (k0, mu_q0) with mu_q0 = 0 unless it is given."""
        k0 = np.asarray(k0, dtype=float).ravel()
        if k0.shape != (self.n,):
            raise InvalidInputError(f"Expected k0 of dimension {self.n}, got {k0.shape[0]}")
        mu = np.zeros(self.m) if mu_q0 is None else np.asarray(mu_q0, dtype=float).ravel()
        return np.concatenate([k0, mu])

    def q0(self, k0) -> np.ndarray:
        """The determinate initial jump q0 = -P_mm^-1 P_mn k0."""
        return self.q0_map @ np.asarray(k0, dtype=float).ravel()


@dataclass(frozen=True)
class HistoryRule:
    """``r_t = psi_r r_{t-1} + psi_k0 k_t + psi_k1 k_{t-1}`` for t >= 1."""

    psi_r: float
    psi_k0: np.ndarray
    psi_k1: np.ndarray
    parameter_count: int
    identified: bool

    def predict(self, r_previous: float, k, k_previous) -> float:
        return float(self.psi_r * r_previous + self.psi_k0 @ np.asarray(k) + self.psi_k1 @ np.asarray(k_previous))

    def replay_residual(self, k, r) -> float:
        """Returns max over t >= 1 of |r_t - predicted r_t| for the series k (T x n) and r (T)."""
        k = np.atleast_2d(np.asarray(k, dtype=float))
        r = np.asarray(r, dtype=float).ravel()
        if len(r) < 2:
            return 0.0
        predicted = self.psi_r * r[:-1] + k[1:] @ self.psi_k0 + k[:-1] @ self.psi_k1
        return float(np.max(np.abs(r[1:] - predicted)))


@dataclass(frozen=True, eq=False)
class ProbeReport:
    reset_time: int
    mu_q_at_reset: np.ndarray
    q_before: np.ndarray
    q_after: np.ndarray
    q_jump: np.ndarray
    continuation_loss: float
    reset_loss: float
    committed: BoundednessReport
    reset: BoundednessReport

    @property
    def loss_difference(self) -> float:
        return self.continuation_loss - self.reset_loss


def _verify_first_order_conditions(model: ModelSpec, P, F, tol: Tolerances) -> float:
    """
    Simulates y_{t+1} = (A - B F) y_t from (k0, q0) with k0 = 1 and checks, with mu_t = P y_t,

        rho r_t + beta B' mu_{t+1} = 0
        mu_t = Q y_t + beta A' mu_{t+1}
    """
    A, B, Q = model.A, model.B, model.Q
    closed = A - B @ F[np.newaxis, :]

    P_mm_inv = np.linalg.inv(P[model.n:, model.n:])
    k0 = np.ones(model.n)
    y = np.concatenate([k0, -P_mm_inv @ P[model.n:, : model.n] @ k0])

    worst = 0.0
    for _ in range(tol.horizon):
        r = -F @ y
        y_next = closed @ y
        mu, mu_next = P @ y, P @ y_next
        instrument = abs(float(model.rho * r + model.beta * (B[:, 0] @ mu_next)))
        costate = float(np.max(np.abs(mu - Q @ y - model.beta * A.T @ mu_next)))
        worst = max(worst, instrument, costate)
        y = y_next

    return worst


@log_refusal
def solve_commitment(model: ModelSpec, tol: Tolerances = None) -> CommitmentSolution:
    """
    Solves the commitment problem in four steps: the regulator problem with all variables
    treated as predetermined, a check of the first-order conditions along a simulated path, the
    partition of P into the rule on (k, mu_q) and the determinate initial condition mu_q,0 = 0.

    Raises:
        NotControllableError: when (A, B) is not controllable over all n + m states.
        SingularMultiplierBlockError: when P_mm can not be inverted.
        InternalConsistencyError: when the first-order conditions are violated.
    """
    tol = resolve(tol)
    n, m = model.n, model.m

    report = controllability(model.A, model.B, tol)
    if not report.full:
        raise NotControllableError(
            f"(A, B) is not controllable over the n+m={n + m} states: rank {report.rank}, "
            f"the commitment solution needs full controllability",
            report=report,
        )

    riccati = solve_dare(model.A, model.B, model.Q, model.rho, model.beta, tol, require_controllable=False)
    P, F = riccati.P, riccati.F

    P_mn, P_mm = P[n:, :n], P[n:, n:]
    condition = float(np.linalg.cond(P_mm))
    if not np.isfinite(condition) or condition > tol.condition_limit:
        raise SingularMultiplierBlockError(
            f"Phi representation unavailable: P_mm is numerically singular (condition number {condition:.3g})"
        )

    foc_residual = _verify_first_order_conditions(model, P, F, tol)
    scale = 1.0 + float(np.max(np.abs(P)))
    if foc_residual > tol.foc * scale:
        raise InternalConsistencyError(f"First-order conditions violated, residual {foc_residual:.3g}")

    P_mm_inv = np.linalg.inv(P_mm)
    identity_n = np.eye(n)

    S = np.block([[identity_n, np.zeros((n, m))], [-P_mm_inv @ P_mn, P_mm_inv]])
    L = np.block([[identity_n, np.zeros((n, m))], [P_mn, P_mm]])

    closed = model.A - model.B @ F[np.newaxis, :]
    T_closed = L @ closed @ S
    Phi = -F @ S
    q0_map = -P_mm_inv @ P_mn

    for array in (S, L, T_closed, Phi, q0_map):
        array.setflags(write=False)

    logger.info(f"Commitment rule Phi = {Phi.tolist()}, cond(P_mm) = {condition:.3g}")

    return CommitmentSolution(
        P=P,
        F=F,
        Phi=Phi,
        T_closed=T_closed,
        q0_map=q0_map,
        P_mm_condition=condition,
        state_map=S,
        multiplier_map=L,
        riccati=riccati,
        foc_residual=foc_residual,
        n=n,
        m=m,
        controllability=report,
    )


@log_refusal
def build_history_rule(sol: CommitmentSolution, model: ModelSpec = None, tol: Tolerances = None) -> HistoryRule:
    """
    Eliminates the multiplier from the rule for a single jump variable:

        mu_q,t-1 = (r_{t-1} - Phi_k k_{t-1}) / Phi_mu
        mu_q,t = T_mu_k k_{t-1} + T_mu_mu mu_q,t-1

    so that ``r_t = T_mu_mu r_{t-1} + Phi_k k_t + (Phi_mu T_mu_k - T_mu_mu Phi_k) k_{t-1}``.

    Raises:
        UnsupportedError: when m > 1 or the coefficient on the multiplier vanishes.
    """
    tol = resolve(tol)
    n, m = sol.n, sol.m
    if model is not None and (model.n, model.m) != (n, m):
        raise InvalidInputError("Commitment solution and model have different dimensions")

    if m != 1:
        raise UnsupportedError(f"The history dependent rule is only constructed for m = 1, got m = {m}")

    phi_k = np.array(sol.Phi_k)
    phi_mu = float(sol.Phi_mu[0])
    if abs(phi_mu) <= tol.phi_mu_min:
        raise UnsupportedError(f"The multiplier can not be eliminated, its coefficient is {phi_mu:.3g}")

    T_mu_k = np.array(sol.T_closed[n, :n])
    T_mu_mu = float(sol.T_closed[n, n])

    parameter_count = 2 * n + 1

    return HistoryRule(
        psi_r=T_mu_mu,
        psi_k0=phi_k,
        psi_k1=phi_mu * T_mu_k - T_mu_mu * phi_k,
        parameter_count=parameter_count,
        identified=parameter_count == n + m,
    )


def _check_targets(targets: np.ndarray, tol: Tolerances):
    scale = max(1.0, float(np.max(np.abs(targets))))

    unmatched = list(targets)
    while unmatched:
        value = unmatched.pop(0)
        if abs(value.imag) <= tol.imag_residual * scale:
            continue
        partner = [i for i, other in enumerate(unmatched) if abs(other - np.conj(value)) <= tol.imag_residual * scale]
        if not partner:
            raise InvalidInputError(f"Target {value} has no complex conjugate partner")
        unmatched.pop(partner[0])

    for i in range(len(targets)):
        for j in range(i + 1, len(targets)):
            if abs(targets[i] - targets[j]) <= tol.distinct * scale:
                raise RepeatedTargetsError(f"Targets {targets[i]} and {targets[j]} are not distinct")


@log_refusal
def identify_rule_from_spectrum(A, B, target_eigenvalues, tol: Tolerances = None) -> np.ndarray:
    """
    Returns the unique gain F such that A - B F has the target eigenvalues (Ackermann's formula).

        F = e_d' C^-1 phi(A)

    with C the controllability matrix and phi the monic polynomial with the targets as roots.

    Raises:
        NotControllableError: when (A, B) is not controllable.
        RepeatedTargetsError: when targets are not distinct.
        InvalidInputError: when targets are not closed under conjugation or have the wrong count.
    """
    tol = resolve(tol)

    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(-1, 1)
    targets = np.asarray(target_eigenvalues, dtype=complex).ravel()
    d = A.shape[0]

    if len(targets) != d:
        raise InvalidInputError(f"Expected {d} target eigenvalues, got {len(targets)}")

    _check_targets(targets, tol)

    report = controllability(A, B, tol)
    if not report.full:
        raise NotControllableError(f"No placement: (A, B) is not controllable, rank {report.rank} < {d}", report=report)

    coefficients = np.real(np.poly(targets))
    phi_A = np.zeros((d, d))
    for coefficient in coefficients:
        phi_A = phi_A @ A + coefficient * np.eye(d)

    e_d = np.zeros(d)
    e_d[-1] = 1.0
    w = np.linalg.solve(controllability_matrix(A, B).T, e_d)
    F = w @ phi_A

    placed = list(np.linalg.eigvals(A - B @ F[np.newaxis, :]))
    worst = 0.0
    for target in targets:
        distances = [abs(value - target) for value in placed]
        best = int(np.argmin(distances))
        worst = max(worst, distances[best])
        placed.pop(best)

    if worst > tol.placement * max(1.0, float(np.max(np.abs(targets)))):
        raise InternalConsistencyError(f"Pole placement missed the targets by {worst:.3g}")

    return F


def time_inconsistency_probe(
    sol: CommitmentSolution, model: ModelSpec, reset_time: int, k0=None, horizon: int = None, tol: Tolerances = None
) -> ProbeReport:
    """
    Follows the committed path up to ``reset_time`` and then re-optimizes, i.e. resets mu_q to 0
    while keeping k. Reports the jump in q, the value of continuing (y' P y for the committed
    state) and of re-optimizing, and the boundedness of both paths.
    """
    from relq.analysis import check_boundedness
    from relq.analysis import commitment_law
    from relq.analysis import simulate

    tol = resolve(tol)
    horizon = tol.horizon if horizon is None else int(horizon)

    if reset_time < 0:
        raise InvalidInputError(f"reset_time must be non-negative, got {reset_time}")
    if reset_time >= horizon:
        raise InvalidInputError(f"reset_time {reset_time} must be smaller than the horizon {horizon}")

    k0 = np.ones(sol.n) if k0 is None else np.asarray(k0, dtype=float)
    law = commitment_law(model, sol)

    committed = simulate(model, law, sol.initial_state(k0), horizon, tol)
    state = committed.states[reset_time]
    k_s, mu_s = state[: sol.n], state[sol.n:]

    y_before = sol.state_map @ state
    reset_state = sol.initial_state(k_s)
    y_after = sol.state_map @ reset_state

    reset = simulate(model, law, reset_state, horizon, tol)

    q_before = y_before[sol.n:]
    q_after = y_after[sol.n:]

    report = ProbeReport(
        reset_time=int(reset_time),
        mu_q_at_reset=mu_s,
        q_before=q_before,
        q_after=q_after,
        q_jump=q_after - q_before,
        continuation_loss=loss_of_state(sol.riccati, y_before),
        reset_loss=loss_of_state(sol.riccati, y_after),
        committed=check_boundedness(committed, model.beta, tol),
        reset=check_boundedness(reset, model.beta, tol),
    )

    logger.info(
        f"Reset at t={reset_time}: q jumps by {report.q_jump.tolist()}, loss {report.continuation_loss:.6g} "
        f"-> {report.reset_loss:.6g}"
    )

    return report
