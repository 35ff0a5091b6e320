"""
Eigenstructure of open- and closed-loop matrices and the Kalman controllability test.

The central object is the `SpectralSplit` of a closed-loop matrix ``C = A - B F``: its eigenvalues
sorted by modulus, and the matrix ``M`` of left eigenvectors (one per row, ``M C = Lambda M``) in
the same order, so that the stable eigenvalues, i.e. ``|lambda| < 1/sqrt(beta)``, come first.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List
from typing import Sequence
from typing import Tuple

import numpy as np
import scipy.linalg

from relq.config import Tolerances
from relq.config import resolve
from relq.exceptions import DefectiveMatrixError
from relq.exceptions import InvalidInputError

logger = logging.getLogger(__name__)


def numerical_rank(matrix, rtol: float) -> Tuple[int, np.ndarray]:
    """
    Returns the numerical rank of a matrix and its singular values. Singular values larger than
    ``sigma_max * rtol`` count towards the rank.
    """
    matrix = np.atleast_2d(np.asarray(matrix))
    if matrix.size == 0:
        return 0, np.zeros(0)
    singular_values = scipy.linalg.svdvals(matrix)
    if singular_values[0] == 0.0:
        return 0, singular_values
    return int(np.sum(singular_values > singular_values[0] * rtol)), singular_values


@dataclass(frozen=True)
class ControllabilityReport:
    rank: int
    full: bool
    singular_values: Tuple[float, ...]
    dimension: int


def controllability_matrix(A, B) -> np.ndarray:
    """Returns [B, AB, A^2 B, ..., A^(d-1) B]."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)

    d = A.shape[0]
    if A.shape != (d, d):
        raise InvalidInputError(f"A must be square, got shape {A.shape}")
    if B.shape[0] != d:
        raise InvalidInputError(f"B has {B.shape[0]} rows, A has {d}")

    columns = [B]
    for _ in range(d - 1):
        columns.append(A @ columns[-1])
    return np.hstack(columns)


def controllability(A, B, tol: Tolerances = None) -> ControllabilityReport:
    """
    The Kalman test: the pair (A, B) is controllable when [B, AB, ..., A^(d-1) B] has full rank d.

    The rank counts singular values above ``sigma_max * d * controllability_rtol``.
    """
    tol = resolve(tol)

    ctrb = controllability_matrix(A, B)
    d = ctrb.shape[0]
    rank, singular_values = numerical_rank(ctrb, d * tol.controllability_rtol)

    logger.debug(f"Controllability rank {rank}/{d}, singular values {singular_values}")

    return ControllabilityReport(
        rank=rank,
        full=rank == d,
        singular_values=tuple(float(x) for x in singular_values),
        dimension=d,
    )


@dataclass(frozen=True, eq=False)
class SpectralSplit:
    """
    Eigenvalues and left eigenvectors of a real square matrix, sorted by modulus, with the
    classification stable/unstable against ``threshold = 1/sqrt(beta)``.

    Borderline eigenvalues, i.e. within the stability margin of the threshold, are classified
    unstable and their indices are listed in ``borderline``.
    """

    matrix: np.ndarray
    beta: float
    eigenvalues: np.ndarray
    M: np.ndarray
    threshold: float
    n_S: int
    n_below_unit: int
    distinct: bool
    diagonalizable: bool
    borderline: Tuple[int, ...]
    identity_residual: float

    @property
    def dimension(self) -> int:
        return len(self.eigenvalues)

    @property
    def stable_indices(self) -> Tuple[int, ...]:
        return tuple(range(self.n_S))

    @property
    def Lambda_stable(self) -> np.ndarray:
        return np.diag(self.eigenvalues[: self.n_S])

    @property
    def Lambda_unstable(self) -> np.ndarray:
        return np.diag(self.eigenvalues[self.n_S:])

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(self.eigenvalues))) if self.dimension else 0.0

    def blocks(self, n: int):
        """Returns (M_nn, M_nm, M_mn, M_mm) for the rows in their sorted order."""
        M = self.M
        return M[:n, :n], M[:n, n:], M[n:, :n], M[n:, n:]


def _clusters(eigenvalues: np.ndarray, gap: float) -> List[List[int]]:
    clusters = []
    assigned = set()
    for i in range(len(eigenvalues)):
        if i in assigned:
            continue
        members = [j for j in range(len(eigenvalues)) if j not in assigned
                   and abs(eigenvalues[j] - eigenvalues[i]) <= gap]
        assigned.update(members)
        clusters.append(members)
    return clusters


def spectral_split(matrix, beta: float, tol: Tolerances = None) -> SpectralSplit:
    """
    Computes the eigenvalues and the left-eigenvector matrix of a real square matrix.

    Eigenvalues are sorted by modulus, ties are broken on the real and then the imaginary part.
    Rows of ``M`` follow the same order, so ``M @ matrix == diag(eigenvalues) @ M``.

    Raises:
        InvalidInputError: when the matrix is not real and square or beta is out of range.
        DefectiveMatrixError: when a repeated eigenvalue lacks a full set of eigenvectors.
    """
    tol = resolve(tol)

    matrix = np.atleast_2d(np.asarray(matrix))
    if np.iscomplexobj(matrix):
        raise InvalidInputError("spectral_split expects a real matrix")
    matrix = matrix.astype(float)
    d = matrix.shape[0]
    if matrix.shape != (d, d):
        raise InvalidInputError(f"Expected a square matrix, got shape {matrix.shape}")
    if not 0.0 < beta <= 1.0:
        raise InvalidInputError(f"beta={beta} out of range (0, 1]")

    w, vl = scipy.linalg.eig(matrix, left=True, right=False)

    order = np.lexsort((w.imag, w.real, np.round(np.abs(w), 12)))
    eigenvalues = w[order]
    M = vl.conj().T[order, :]

    threshold = 1.0 / np.sqrt(beta)
    modulus = np.abs(eigenvalues)
    stable = modulus < threshold - tol.stability_margin
    borderline = tuple(int(i) for i in np.flatnonzero(np.abs(modulus - threshold) <= tol.stability_margin))
    for idx in borderline:
        logger.warning(
            f"Eigenvalue {eigenvalues[idx]:.6g} is within {tol.stability_margin} of the threshold "
            f"{threshold:.6g} and is classified unstable."
        )

    scale = float(np.max(modulus)) if d else 0.0
    gap = tol.distinct * scale

    distinct = all(
        abs(eigenvalues[i] - eigenvalues[j]) > gap for i in range(d) for j in range(i + 1, d)
    ) if scale > 0.0 else d <= 1

    diagonalizable = True
    if not distinct:
        norm = max(1.0, float(np.max(np.abs(matrix))))
        for cluster in _clusters(eigenvalues, max(gap, tol.distinct)):
            if len(cluster) == 1:
                continue
            center = complex(np.mean(eigenvalues[cluster]))
            singular_values = scipy.linalg.svdvals(matrix - center * np.eye(d))
            geometric = int(np.sum(singular_values <= tol.distinct * norm))
            if geometric < len(cluster):
                raise DefectiveMatrixError(
                    f"defective matrix: eigenvalue {center:.6g} has algebraic multiplicity {len(cluster)} "
                    f"but only {geometric} eigenvector(s)",
                    eigenvalue=center,
                )

    residual = float(np.max(np.abs(M @ matrix - np.diag(eigenvalues) @ M))) if d else 0.0

    n_S = int(np.sum(stable))
    n_below_unit = int(np.sum(modulus < 1.0 - tol.stability_margin))
    if n_below_unit != n_S:
        logger.info(f"{n_S} eigenvalues are below 1/sqrt(beta)={threshold:.6g}, {n_below_unit} are below 1.")

    M.setflags(write=False)
    eigenvalues.setflags(write=False)

    return SpectralSplit(
        matrix=matrix,
        beta=float(beta),
        eigenvalues=eigenvalues,
        M=M,
        threshold=float(threshold),
        n_S=n_S,
        n_below_unit=n_below_unit,
        distinct=bool(distinct),
        diagonalizable=diagonalizable,
        borderline=borderline,
        identity_residual=residual,
    )


@dataclass(frozen=True)
class MirrorPair:
    open_loop: complex
    closed_loop: complex
    kind: str  # 'unchanged' or 'mirrored'
    residual: float


@dataclass(frozen=True)
class MirrorReport:
    pairs: Tuple[MirrorPair, ...]
    max_residual: float
    passed: bool


def eigenvalue_mirror_check(open_loop: SpectralSplit, closed_loop: SpectralSplit, tol: Tolerances = None) -> MirrorReport:
    """
    Checks the minimal-volatility pattern of a Q = 0 solution: stable open-loop eigenvalues are
    unchanged in the closed loop and every unstable open-loop eigenvalue is mirrored by a
    closed-loop eigenvalue of modulus ``threshold^2 / |lambda|``, i.e. ``1/|lambda|`` for beta = 1.

    Eigenvalues are matched greedily, stable ones first.
    """
    tol = resolve(tol)

    if open_loop.dimension != closed_loop.dimension:
        raise InvalidInputError(
            f"Can not compare spectra of dimension {open_loop.dimension} and {closed_loop.dimension}"
        )

    available = list(closed_loop.eigenvalues)
    pairs: List[MirrorPair] = []

    for idx, value in enumerate(open_loop.eigenvalues):
        if idx >= open_loop.n_S:
            continue
        distances = [abs(candidate - value) for candidate in available]
        best = int(np.argmin(distances))
        pairs.append(MirrorPair(complex(value), complex(available.pop(best)), "unchanged", float(distances[best])))

    squared = open_loop.threshold ** 2
    for value in open_loop.eigenvalues[open_loop.n_S:]:
        target = squared / abs(value)
        distances = [abs(abs(candidate) - target) for candidate in available]
        best = int(np.argmin(distances))
        pairs.append(MirrorPair(complex(value), complex(available.pop(best)), "mirrored", float(distances[best])))

    max_residual = max((pair.residual for pair in pairs), default=0.0)

    return MirrorReport(pairs=tuple(pairs), max_residual=max_residual, passed=max_residual <= tol.mirror)


def rows_for(split: SpectralSplit, subset: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns the rows of M for the chosen `subset` and for its complement, in sorted index order.
    """
    chosen = sorted(int(i) for i in subset)
    complement = [i for i in range(split.dimension) if i not in chosen]
    return split.M[chosen, :], split.M[complement, :]
