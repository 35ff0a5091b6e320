"""
The discounted discrete algebraic Riccati equation

    P = Q + beta A'PA - beta^2 A'PB (rho + beta B'PB)^-1 B'PA

and its feedback gain ``F = beta (rho + beta B'PB)^-1 B'PA``. The optimal rule is ``r = -F y``
and ``y0' P y0`` is the minimal discounted loss from the state ``y0``.

The solution is found by iterating the right-hand side of the equation from ``P = I``. For
``Q = 0`` the equation also has the non-stabilizing fixed point ``P = 0``, which the identity seed
avoids. Optionally a doubling accelerator is tried first; its result is only accepted when it is a
stabilizing fixed point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional
from typing import Tuple

import numpy as np
from scipy.linalg import LinAlgError
from scipy.linalg import lu_factor
from scipy.linalg import lu_solve

from relq.config import Tolerances
from relq.config import resolve
from relq.decorators import timer
from relq.exceptions import DivergenceError
from relq.exceptions import InternalConsistencyError
from relq.exceptions import InvalidInputError
from relq.exceptions import NonStabilizingError
from relq.exceptions import NotControllableError
from relq.spectral import ControllabilityReport
from relq.spectral import controllability

logger = logging.getLogger(__name__)

DOUBLING_MAX_ITER = 100


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    P: np.ndarray
    F: np.ndarray
    residual: float
    closed_loop_eigenvalues: np.ndarray
    iterations: int
    method: str = "fixed_point"
    controllability: Optional[ControllabilityReport] = None

    @property
    def dimension(self) -> int:
        return self.P.shape[0]

    def loss(self, y0) -> float:
        return loss_of_state(self, y0)


def _check_problem(A, B, Q, rho, beta) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))

    d = A.shape[0]
    if A.shape != (d, d):
        raise InvalidInputError(f"A must be square, got shape {A.shape}")
    if B.shape != (d, 1):
        raise InvalidInputError(f"B must have shape ({d}, 1), got {B.shape}")
    if Q.shape != (d, d):
        raise InvalidInputError(f"Q must have shape ({d}, {d}), got {Q.shape}")
    if not rho > 0.0:
        raise InvalidInputError(f"rho must be positive, got {rho}")
    if not 0.0 < beta <= 1.0:
        raise InvalidInputError(f"beta={beta} out of range (0, 1]")

    return A, B, Q


def _max_norm(matrix) -> float:
    return float(np.max(np.abs(matrix))) if np.size(matrix) else 0.0


def riccati_map(P, A, B, Q, rho: float, beta: float) -> np.ndarray:
    """Returns the right-hand side of the discounted Riccati equation evaluated at P."""
    PA = P @ A
    PB = P @ B
    S = rho + beta * (B.T @ PB)
    return Q + beta * (A.T @ PA) - beta ** 2 * (A.T @ PB) @ np.linalg.solve(S, PB.T @ A)


def feedback_gain(P, A, B, rho: float, beta: float) -> np.ndarray:
    """Returns the row F = beta (rho + beta B'PB)^-1 B'PA."""
    A, B, _ = _check_problem(A, B, P, rho, beta)
    S = rho + beta * (B.T @ P @ B)
    return (beta * np.linalg.solve(S, B.T @ P @ A)).ravel()


def dare_residual(P, A, B, Q, rho: float, beta: float) -> float:
    """Returns the max-norm of riccati_map(P) - P."""
    A, B, Q = _check_problem(A, B, Q, rho, beta)
    return _max_norm(riccati_map(np.asarray(P, dtype=float), A, B, Q, rho, beta) - P)


def _fixed_point(A, B, Q, rho, beta, tol: Tolerances, P0=None) -> Tuple[np.ndarray, int]:
    d = A.shape[0]
    P = np.eye(d) if P0 is None else np.array(P0, dtype=float)
    step = np.inf

    for iteration in range(1, tol.max_iter + 1):
        P_next = riccati_map(P, A, B, Q, rho, beta)
        P_next = (P_next + P_next.T) / 2
        step = _max_norm(P_next - P)
        P = P_next
        if not np.isfinite(step):
            break
        if step < tol.riccati_step * (1.0 + _max_norm(P)):
            logger.debug(f"Riccati fixed point converged after {iteration} iterations")
            return P, iteration

    raise DivergenceError(
        f"Riccati iteration did not converge in {tol.max_iter} iterations, last step {step:.3g}",
        residual=_max_norm(riccati_map(P, A, B, Q, rho, beta) - P) if np.all(np.isfinite(P)) else np.inf,
    )


def _doubling(A, B, Q, rho, beta, tol: Tolerances) -> Tuple[Optional[np.ndarray], int]:
    """
    Structure-preserving doubling on the sqrt(beta)-scaled pair. Returns (None, iterations)
    when the iteration breaks down or does not converge.
    """
    d = A.shape[0]
    scale = np.sqrt(beta)
    A_k = scale * A
    G_k = (scale * B) @ (scale * B).T / rho
    H_k = np.array(Q, dtype=float)
    identity = np.eye(d)

    for iteration in range(1, DOUBLING_MAX_ITER + 1):
        try:
            W = lu_factor(identity + G_k @ H_k)
        except (LinAlgError, ValueError):
            return None, iteration
        A_W = A_k @ lu_solve(W, identity)
        A_next = A_W @ A_k
        G_next = G_k + A_W @ G_k @ A_k.T
        H_next = H_k + A_k.T @ H_k @ lu_solve(W, A_k)
        H_next = (H_next + H_next.T) / 2

        step = _max_norm(H_next - H_k)
        A_k, G_k, H_k = A_next, (G_next + G_next.T) / 2, H_next

        if not np.all(np.isfinite(H_k)):
            return None, iteration
        if step < tol.riccati_step * (1.0 + _max_norm(H_k)):
            return H_k, iteration

    return None, DOUBLING_MAX_ITER


def _is_stabilizing(P, A, B, rho, beta, tol: Tolerances) -> Tuple[bool, np.ndarray, np.ndarray]:
    F = feedback_gain(P, A, B, rho, beta)
    eigenvalues = np.linalg.eigvals(A - B @ F[np.newaxis, :])
    bound = 1.0 / np.sqrt(beta) - tol.stabilizing_margin
    return bool(np.all(np.abs(eigenvalues) < bound)), F, eigenvalues


@timer()
def solve_dare(
    A, B, Q, rho: float, beta: float, tol: Tolerances = None, *, require_controllable: bool = True, method: str = None
) -> RiccatiSolution:
    """
    Solves the discounted Riccati equation for its stabilizing solution.

    Args:
        A: the d x d transition matrix
        B: the d x 1 instrument impact
        Q: the d x d positive semi-definite loss weights
        rho: the instrument weight, rho > 0
        beta: the discount factor in (0, 1]
        tol: tolerances, defaults to the configured ones
        require_controllable: refuse when (sqrt(beta) A, sqrt(beta) B) is not controllable
        method: 'fixed_point' or 'doubling', defaults to the configured method

    Raises:
        NotControllableError: the pair is not controllable, the report is attached.
        DivergenceError: the iteration did not converge or the residual is too large.
        NonStabilizingError: the fixed point does not stabilize A - B F.
    """
    tol = resolve(tol)
    method = method or tol.method
    A, B, Q = _check_problem(A, B, Q, rho, beta)

    report = None
    if require_controllable:
        report = controllability(np.sqrt(beta) * A, np.sqrt(beta) * B, tol)
        if not report.full:
            raise NotControllableError(
                f"(A, B) is not controllable: rank {report.rank} < {report.dimension}", report=report
            )

    P = None
    iterations = 0

    if method == "doubling":
        P, iterations = _doubling(A, B, Q, rho, beta, tol)
        if P is not None:
            stabilizing, _, _ = _is_stabilizing(P, A, B, rho, beta, tol)
            residual = _max_norm(riccati_map(P, A, B, Q, rho, beta) - P)
            if not stabilizing or residual > tol.riccati_residual * (1.0 + _max_norm(P)):
                logger.info("Doubling did not give the stabilizing solution, falling back to the fixed point map.")
                P = None
            else:
                # polish with the fixed-point map, so both methods agree
                P, extra = _fixed_point(A, B, Q, rho, beta, tol, P0=P)
                iterations += extra
        if P is None:
            method = "fixed_point"

    if P is None:
        P, iterations = _fixed_point(A, B, Q, rho, beta, tol)

    residual = _max_norm(riccati_map(P, A, B, Q, rho, beta) - P)
    if residual > tol.riccati_residual * (1.0 + _max_norm(P)):
        raise DivergenceError(f"Riccati residual {residual:.3g} too large", residual=residual)

    smallest = float(np.min(np.linalg.eigvalsh(P)))
    if smallest < -1e-8 * (1.0 + _max_norm(P)):
        raise InternalConsistencyError(f"Riccati solution is not positive semi-definite, eigenvalue {smallest:.3g}")

    stabilizing, F, eigenvalues = _is_stabilizing(P, A, B, rho, beta, tol)
    if not stabilizing:
        raise NonStabilizingError(
            f"Riccati solution is not stabilizing: closed-loop spectral radius {np.max(np.abs(eigenvalues)):.6g} "
            f">= 1/sqrt(beta) = {1 / np.sqrt(beta):.6g}, the problem is not detectable"
        )

    P.setflags(write=False)
    F.setflags(write=False)

    return RiccatiSolution(
        P=P,
        F=F,
        residual=residual,
        closed_loop_eigenvalues=eigenvalues,
        iterations=iterations,
        method=method,
        controllability=report,
    )


def loss_of_state(solution: RiccatiSolution | np.ndarray, y0) -> float:
    """Returns y0' P y0, the minimal discounted loss from the state y0."""
    P = solution.P if isinstance(solution, RiccatiSolution) else np.asarray(solution, dtype=float)
    y0 = np.asarray(y0, dtype=float).ravel()
    if y0.shape != (P.shape[0],):
        raise InvalidInputError(f"Expected a state of dimension {P.shape[0]}, got {y0.shape[0]}")
    return float(y0 @ P @ y0)
