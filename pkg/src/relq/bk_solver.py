"""
Blanchard-Kahn solutions of the closed loop ``y_{t+1} = (A - B F) y_t``.

A bounded solution needs the non-predetermined variables on an invariant manifold
``q = -N k``. Choosing ``n`` stable eigenvalues for the manifold, the rows of the left eigenvector
matrix for the other ``m`` eigenvalues must annihilate the state, ``M_mn k + M_mm q = 0``, so that
``N = M_mm^-1 M_mn``.

With ``n_S`` stable eigenvalues there are three cases:

* ``n_S < n``: no equilibrium,
* ``n_S = n``: a unique equilibrium,
* ``n_S > n``: ``binomial(n_S, n)`` candidate equilibria, one per choice of stable eigenvalues.

Given ``N``, the quasi-optimal rule solves the reduced regulator problem on the predetermined
variables with ``A' = A_nn - A_nm N`` and the loss restricted to the manifold.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from dataclasses import field
from math import comb
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from relq.config import Tolerances
from relq.config import resolve
from relq.decorators import log_refusal
from relq.exceptions import ComplexSolutionError
from relq.exceptions import InvalidInputError
from relq.exceptions import NoEquilibriumError
from relq.exceptions import NotControllableError
from relq.exceptions import RejectedSubsetError
from relq.model import ModelSpec
from relq.model import PolicyRule
from relq.riccati import RiccatiSolution
from relq.riccati import solve_dare
from relq.spectral import ControllabilityReport
from relq.spectral import SpectralSplit
from relq.spectral import controllability
from relq.spectral import rows_for
from relq.spectral import spectral_split

logger = logging.getLogger(__name__)

NO_EQUILIBRIUM = "no_equilibrium"
UNIQUE = "unique"
MULTIPLE = "multiple"

COMPLEX_SPLIT = "complex solution: conjugate pair split across stable set"


@dataclass(frozen=True, eq=False)
class BKSolution:
    """One Blanchard-Kahn equilibrium, the manifold q = -N k and the reduced problem."""

    case_label: Optional[str]
    chosen_subset: Optional[Tuple[int, ...]]
    N: np.ndarray
    A_reduced: Optional[np.ndarray] = None
    Q_reduced: Optional[np.ndarray] = None
    conditioning: Optional[float] = None
    eigenvalues: Optional[np.ndarray] = None
    manifold_residual: float = 0.0


@dataclass(frozen=True, eq=False)
class BKClassification:
    case_label: str
    split: SpectralSplit
    n: int
    m: int

    @property
    def count_formula(self) -> int:
        return comb(self.split.n_S, self.n) if self.split.n_S >= self.n else 0

    @property
    def upper_bound(self) -> int:
        return comb(self.n + self.m, self.n)


@dataclass(frozen=True, eq=False)
class EquilibriumSet:
    case_label: str
    count_formula: int
    upper_bound: int
    split: SpectralSplit
    solutions: Tuple[BKSolution, ...] = ()
    rejected: Tuple[Tuple[Tuple[int, ...], str], ...] = ()
    distinct_maps: bool = True

    @property
    def indeterminate(self) -> bool:
        return len(self.solutions) > 1


@dataclass(frozen=True, eq=False)
class QuasiOptimalSolution:
    """The reduced regulator solution on the manifold ``q = -N k`` and its restricted rule (F', 0)."""

    riccati: RiccatiSolution
    bk: BKSolution
    rule: PolicyRule
    controllability: ControllabilityReport = field(default=None)

    @property
    def F_reduced(self) -> np.ndarray:
        return self.riccati.F

    @property
    def P_reduced(self) -> np.ndarray:
        return self.riccati.P


def case_of(n_S: int, n: int) -> str:
    if n_S < n:
        return NO_EQUILIBRIUM
    if n_S == n:
        return UNIQUE
    return MULTIPLE


def classify_bk(model: ModelSpec, rule: PolicyRule, tol: Tolerances = None) -> BKClassification:
    """
    Classifies the closed loop A - B F by comparing the number of stable eigenvalues with the
    number of predetermined variables.

    Raises:
        DefectiveMatrixError: when the closed-loop matrix is not diagonalizable.
    """
    tol = resolve(tol)
    split = spectral_split(model.closed_loop(rule), model.beta, tol)
    label = case_of(split.n_S, model.n)

    logger.info(f"Blanchard-Kahn: {split.n_S} stable eigenvalue(s) for n={model.n}, case '{label}'")

    return BKClassification(case_label=label, split=split, n=model.n, m=model.m)


def manifold_residual(C, N) -> float:
    """
    Returns the max-norm of ``N C_nn - N C_nm N + C_mn - C_mm N``, which vanishes when the
    manifold ``q = -N k`` is invariant under ``y -> C y``.
    """
    C = np.asarray(C)
    N = np.atleast_2d(np.asarray(N))
    n = N.shape[1]
    C_nn, C_nm, C_mn, C_mm = C[:n, :n], C[:n, n:], C[n:, :n], C[n:, n:]
    return float(np.max(np.abs(N @ C_nn - N @ C_nm @ N + C_mn - C_mm @ N)))


def reduced_matrices(model: ModelSpec, N) -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns (A', Q') for the manifold ``q = -N k``:

        A' = A_nn - A_nm N
        Q' = Q_nn + N'Q_mm N - Q_nm N - N'Q_mn

    so that ``k'Q'k = y'Qy`` for every ``y = (k, -N k)``.
    """
    N = np.atleast_2d(np.asarray(N, dtype=float))
    if N.shape != (model.m, model.n):
        raise InvalidInputError(f"N must have shape ({model.m}, {model.n}), got {N.shape}")

    A_reduced = model.A_nn - model.A_nm @ N
    Q_reduced = model.Q_nn + N.T @ model.Q_mm @ N - model.Q_nm @ N - N.T @ model.Q_mn
    Q_reduced = (Q_reduced + Q_reduced.T) / 2

    return A_reduced, Q_reduced


def _conjugate_closed(eigenvalues: np.ndarray, subset: Sequence[int], tol: Tolerances) -> bool:
    scale = max(1.0, float(np.max(np.abs(eigenvalues))))
    chosen = set(subset)
    for idx in chosen:
        value = eigenvalues[idx]
        if abs(value.imag) <= tol.imag_residual * scale:
            continue
        partners = [j for j in range(len(eigenvalues)) if j != idx
                    and abs(eigenvalues[j] - np.conj(value)) <= tol.distinct * scale]
        if not any(j in chosen for j in partners):
            return False
    return True


def build_N(split: SpectralSplit, subset: Sequence[int], model: ModelSpec = None, tol: Tolerances = None) -> BKSolution:
    """
    Builds the saddle-path matrix ``N = M_mm^-1 M_mn`` for the chosen stable eigenvalues.

    The rows of M for the eigenvalues that are *not* chosen give ``[M_mn | M_mm]``. When a model
    is given, the reduced matrices A' and Q' are computed as well.

    Raises:
        InvalidInputError: when the subset is not a set of n stable eigenvalue indices.
        RejectedSubsetError: when M_mm is singular or the manifold is not invariant.
        ComplexSolutionError: when the chosen set splits a conjugate pair or N is complex.
    """
    tol = resolve(tol)

    chosen = tuple(sorted(int(i) for i in subset))
    n = len(chosen)
    d = split.dimension
    m = d - n

    if len(set(chosen)) != n or n < 1 or m < 1:
        raise InvalidInputError(f"Subset {chosen} must hold between 1 and {d - 1} distinct indices")
    if any(i < 0 or i >= split.n_S for i in chosen):
        raise InvalidInputError(f"Subset {chosen} is not part of the stable indices {split.stable_indices}")
    if model is not None and (model.n, model.m) != (n, m):
        raise InvalidInputError(f"Subset of size {n} does not fit a model with n={model.n}, m={model.m}")

    if not _conjugate_closed(split.eigenvalues, chosen, tol):
        raise ComplexSolutionError(COMPLEX_SPLIT, subset=chosen)

    _, rows = rows_for(split, chosen)
    M_mn, M_mm = rows[:, :n], rows[:, n:]

    conditioning = float(np.linalg.cond(M_mm))
    if not np.isfinite(conditioning) or conditioning > tol.condition_limit:
        raise RejectedSubsetError(
            f"M_mm is numerically singular (condition number {conditioning:.3g})", subset=chosen
        )

    N = np.linalg.solve(M_mm, M_mn)
    imaginary = float(np.max(np.abs(N.imag)))
    if imaginary > tol.imag_residual * max(1.0, float(np.max(np.abs(N)))):
        raise ComplexSolutionError(f"{COMPLEX_SPLIT} (imaginary residual {imaginary:.3g})", subset=chosen)
    N = np.ascontiguousarray(N.real)

    residual = manifold_residual(split.matrix, N)
    scale = max(1.0, float(np.max(np.abs(split.matrix)))) * (1.0 + float(np.max(np.abs(N)))) ** 2
    if residual > tol.manifold * scale:
        raise RejectedSubsetError(f"manifold q = -N k is not invariant (residual {residual:.3g})", subset=chosen)

    A_reduced = Q_reduced = None
    if model is not None:
        A_reduced, Q_reduced = reduced_matrices(model, N)

    N.setflags(write=False)

    logger.debug(f"Subset {chosen}: N = {N.tolist()}, cond(M_mm) = {conditioning:.3g}")

    return BKSolution(
        case_label=case_of(split.n_S, n),
        chosen_subset=chosen,
        N=N,
        A_reduced=A_reduced,
        Q_reduced=Q_reduced,
        conditioning=conditioning,
        eigenvalues=split.eigenvalues[list(chosen)],
        manifold_residual=residual,
    )


def _try_subset(split, subset, model, tol):
    try:
        return build_N(split, subset, model, tol), None
    except RejectedSubsetError as exc:
        logger.info(f"Rejected subset {tuple(subset)}: {exc.reason}")
        return None, exc.reason


@log_refusal
def solve_bk(model: ModelSpec, rule: PolicyRule, tol: Tolerances = None) -> EquilibriumSet:
    """
    Classifies the closed loop under the given rule and builds every admissible equilibrium.

    Subsets of stable eigenvalues are visited in lexicographic index order. With
    ``max_workers > 1`` they are evaluated in a thread pool; the results keep that order.

    Raises:
        NoEquilibriumError: when there are fewer stable eigenvalues than predetermined variables.
    """
    tol = resolve(tol)

    classification = classify_bk(model, rule, tol)
    split = classification.split

    if classification.case_label == NO_EQUILIBRIUM:
        raise NoEquilibriumError(
            f"no rational expectations equilibrium: {split.n_S} stable eigenvalue(s) for "
            f"{model.n} predetermined variable(s)"
        )

    subsets = list(itertools.combinations(range(split.n_S), model.n))

    if tol.max_workers > 1 and len(subsets) > 1:
        with ThreadPoolExecutor(max_workers=tol.max_workers) as executor:
            outcomes = list(executor.map(lambda s: _try_subset(split, s, model, tol), subsets))
    else:
        outcomes = [_try_subset(split, subset, model, tol) for subset in subsets]

    solutions = tuple(solution for solution, _ in outcomes if solution is not None)
    rejected = tuple((subset, reason) for subset, (_, reason) in zip(subsets, outcomes) if reason is not None)

    distinct_maps = True
    for first, second in itertools.combinations(solutions, 2):
        if float(np.max(np.abs(first.N - second.N))) <= tol.map_gap:
            distinct_maps = False
            logger.warning(f"Subsets {first.chosen_subset} and {second.chosen_subset} give the same N")

    if len(solutions) > 1:
        logger.warning(
            f"Indeterminacy: {len(solutions)} admissible equilibria out of {classification.count_formula} candidates"
        )

    return EquilibriumSet(
        case_label=classification.case_label,
        count_formula=classification.count_formula,
        upper_bound=classification.upper_bound,
        split=split,
        solutions=solutions,
        rejected=rejected,
        distinct_maps=distinct_maps,
    )


def enumerate_equilibria(model: ModelSpec, rule: PolicyRule, tol: Tolerances = None) -> EquilibriumSet:
    """
    Enumerates the equilibria for a rule on the predetermined variables only, i.e. F_1m = 0.

    Raises:
        InvalidInputError: when the rule responds to the non-predetermined variables.
        NoEquilibriumError: when there are fewer stable eigenvalues than predetermined variables.
    """
    if not rule.restricted:
        raise InvalidInputError(f"enumerate_equilibria expects F_1m = 0, got {rule.F_1m.tolist()}")
    return solve_bk(model, rule, tol)


@log_refusal
def solve_quasi_optimal(model: ModelSpec, N: np.ndarray | BKSolution, tol: Tolerances = None) -> QuasiOptimalSolution:
    """
    Solves the reduced regulator problem on the manifold ``q = -N k``: the Riccati equation for
    (A', B_n, Q') and the restricted rule (F', 0).

    Raises:
        NotControllableError: when the reduced pair (A', B_n) is not controllable.
    """
    tol = resolve(tol)

    if isinstance(N, BKSolution):
        bk = N
        N = bk.N
    else:
        bk = None

    A_reduced, Q_reduced = reduced_matrices(model, N)
    B_reduced = np.array(model.B_n)

    report = controllability(A_reduced, B_reduced, tol)
    if not report.full:
        raise NotControllableError(
            f"reduced pair (A', B_n) is not controllable: rank {report.rank} < {report.dimension}", report=report
        )

    riccati = solve_dare(A_reduced, B_reduced, Q_reduced, model.rho, model.beta, tol, require_controllable=False)

    if bk is None:
        bk = BKSolution(case_label=None, chosen_subset=None, N=np.atleast_2d(np.asarray(N, dtype=float)))
    bk = BKSolution(
        case_label=bk.case_label,
        chosen_subset=bk.chosen_subset,
        N=bk.N,
        A_reduced=A_reduced,
        Q_reduced=Q_reduced,
        conditioning=bk.conditioning,
        eigenvalues=bk.eigenvalues,
        manifold_residual=bk.manifold_residual,
    )

    rule = PolicyRule(riccati.F, np.zeros(model.m), kind="quasi_optimal")

    logger.info(f"Quasi-optimal rule F' = {riccati.F.tolist()} after {riccati.iterations} iterations")

    return QuasiOptimalSolution(riccati=riccati, bk=bk, rule=rule, controllability=report)


def observational_equivalence(rule: PolicyRule, N) -> PolicyRule:
    """
    Returns the rule (F_1n - F_1m N, 0) that gives the same instrument path as `rule` on the
    manifold ``q = -N k``.
    """
    N = np.atleast_2d(np.asarray(N, dtype=float))
    if N.shape != (rule.m, rule.n):
        raise InvalidInputError(f"N must have shape ({rule.m}, {rule.n}), got {N.shape}")
    return PolicyRule(rule.F_1n - rule.F_1m @ N, np.zeros(rule.m), kind=rule.kind)
