import logging
from math import comb

import numpy as np
import pytest

from relq.analysis import full_state_law
from relq.analysis import manifold_law
from relq.analysis import simulate
from relq.bk_solver import COMPLEX_SPLIT
from relq.bk_solver import MULTIPLE
from relq.bk_solver import NO_EQUILIBRIUM
from relq.bk_solver import UNIQUE
from relq.bk_solver import build_N
from relq.bk_solver import case_of
from relq.bk_solver import classify_bk
from relq.bk_solver import enumerate_equilibria
from relq.bk_solver import manifold_residual
from relq.bk_solver import observational_equivalence
from relq.bk_solver import reduced_matrices
from relq.bk_solver import solve_bk
from relq.bk_solver import solve_quasi_optimal
from relq.exceptions import ComplexSolutionError
from relq.exceptions import InvalidInputError
from relq.exceptions import NoEquilibriumError
from relq.exceptions import NotControllableError
from relq.exceptions import RefusalError
from relq.exceptions import RejectedSubsetError
from relq.model import ModelSpec
from relq.model import PolicyRule
from relq.spectral import spectral_split

from helpers import matrix_with_spectrum
from helpers import model_with_open_loop
from helpers import model_with_rule
from helpers import random_weights

logger = logging.getLogger(__name__)


def test_case_of():

    assert case_of(0, 1) == NO_EQUILIBRIUM
    assert case_of(1, 1) == UNIQUE
    assert case_of(3, 1) == MULTIPLE


def test_two_equilibria_by_hand(enum2):

    equilibria = solve_bk(enum2, PolicyRule.zero(1, 1))

    assert equilibria.case_label == MULTIPLE
    assert equilibria.count_formula == 2
    assert equilibria.upper_bound == 2
    assert equilibria.indeterminate
    assert equilibria.distinct_maps

    first, second = equilibria.solutions

    assert first.chosen_subset == (0,)
    assert first.N[0, 0] == pytest.approx(-2.0, abs=1e-8)
    assert second.chosen_subset == (1,)
    assert second.N[0, 0] == pytest.approx(1.0, abs=1e-8)


def test_unique_equilibrium_three_states(tri3):

    equilibria = solve_bk(tri3, PolicyRule.zero(1, 2))

    assert equilibria.case_label == UNIQUE
    assert not equilibria.indeterminate

    (solution,) = equilibria.solutions

    np.testing.assert_allclose(solution.N, [[2 / 3], [-4 / 15]], atol=1e-10)
    assert solution.manifold_residual < 1e-12


def test_open_loop_desk1_is_unique(desk1):

    equilibria = solve_bk(desk1, PolicyRule.zero(1, 1))

    assert equilibria.case_label == UNIQUE
    assert len(equilibria.solutions) == 1
    assert equilibria.split.n_S == 1


def test_over_stable_rule_gives_two_equilibria(desk1, caplog):

    equilibria = enumerate_equilibria(desk1, PolicyRule([0.7], [0.0]))

    np.testing.assert_allclose(sorted(np.abs(equilibria.split.eigenvalues)), [0.6520, 0.9080], atol=1e-4)
    assert equilibria.case_label == MULTIPLE
    assert len(equilibria.solutions) == 2
    assert "Indeterminacy" in caplog.text


def test_strong_rule_has_no_equilibrium(desk1, caplog):

    with pytest.raises(NoEquilibriumError, match="no rational expectations equilibrium"):
        solve_bk(desk1, PolicyRule([5.0], [0.0]))

    assert "solve_bk refused" in caplog.text

    classification = classify_bk(desk1, PolicyRule([5.0], [0.0]))

    assert classification.case_label == NO_EQUILIBRIUM
    assert classification.count_formula == 0


def test_enumerate_needs_a_restricted_rule(desk1):

    with pytest.raises(InvalidInputError, match="F_1m = 0"):
        enumerate_equilibria(desk1, PolicyRule([0.7], [0.1]))


def test_complex_pair_split_is_rejected():

    # stable eigenvalues 0.1 and 0.5 +- 0.2i, one unstable eigenvalue 3
    rotation = np.array([[0.5, -0.2], [0.2, 0.5]])
    closed = np.zeros((4, 4))
    closed[0:2, 0:2] = rotation
    closed[2, 2] = 0.1
    closed[3, 3] = 3.0
    split = spectral_split(closed, 1.0)

    assert split.n_S == 3
    assert split.eigenvalues[0] == pytest.approx(0.1)

    with pytest.raises(ComplexSolutionError, match=COMPLEX_SPLIT) as exc:
        build_N(split, (0, 1))

    assert isinstance(exc.value, RejectedSubsetError)
    assert isinstance(exc.value, RefusalError)
    assert exc.value.subset == (0, 1)

    solution = build_N(split, (1, 2))
    assert np.isrealobj(solution.N)
    np.testing.assert_allclose(solution.N, np.zeros((2, 2)), atol=1e-12)


def test_build_N_input_checks(enum2):

    split = spectral_split(enum2.A, 1.0)

    with pytest.raises(InvalidInputError):
        build_N(split, (0, 1))
    with pytest.raises(InvalidInputError):
        build_N(split, (2,))


def test_singular_M_mm_is_rejected():

    # the eigenvector of the unstable root does not load on q
    closed = np.array([[2.0, 0.0], [0.0, 0.5]])
    split = spectral_split(closed, 1.0)

    with pytest.raises(RejectedSubsetError, match="singular"):
        build_N(split, (0,))


def test_manifold_residual():

    C = np.array([[0.4, -0.1], [-0.2, 0.3]])

    assert manifold_residual(C, [[-2.0]]) == pytest.approx(0.0, abs=1e-15)
    assert manifold_residual(C, [[0.0]]) == pytest.approx(0.2)


def test_reduced_matrices(desk1):

    N = np.array([[0.5]])
    A_reduced, Q_reduced = reduced_matrices(desk1, N)

    assert A_reduced[0, 0] == pytest.approx(0.5 - 0.4 * 0.5)

    # k'Q'k equals y'Qy on the manifold
    k = np.array([2.0])
    y = np.concatenate([k, -N @ k])
    assert k @ Q_reduced @ k == pytest.approx(y @ desk1.Q @ y)

    with pytest.raises(InvalidInputError):
        reduced_matrices(desk1, np.ones((2, 1)))


def test_quasi_optimal(desk1):

    (bk,) = solve_bk(desk1, PolicyRule.zero(1, 1)).solutions

    solution = solve_quasi_optimal(desk1, bk)

    assert solution.rule.kind == "quasi_optimal"
    assert solution.rule.restricted
    np.testing.assert_array_equal(solution.rule.F_1n, solution.F_reduced)
    assert solution.bk.chosen_subset == bk.chosen_subset
    assert solution.bk.A_reduced is not None

    closed = solution.bk.A_reduced - desk1.B_n @ solution.F_reduced[np.newaxis, :]
    assert np.all(np.abs(np.linalg.eigvals(closed)) < 1 / np.sqrt(desk1.beta))

    # a plain N gives the same rule
    other = solve_quasi_optimal(desk1, bk.N)
    np.testing.assert_allclose(other.F_reduced, solution.F_reduced)


def test_quasi_optimal_needs_a_controllable_reduced_pair(desk1):

    model = desk1.with_changes(B=[0.0, 1.0])

    with pytest.raises(NotControllableError, match="reduced pair"):
        solve_quasi_optimal(model, np.array([[0.5]]))


def test_observational_equivalence(desk1):

    rule = PolicyRule([0.7], [0.3], kind="adhoc")
    N = np.array([[-0.5]])

    restricted = observational_equivalence(rule, N)

    assert restricted.restricted
    assert restricted.kind == "adhoc"
    assert restricted.F_1n[0] == pytest.approx(0.7 + 0.3 * 0.5)

    k = np.array([1.3])
    assert restricted.instrument(k, -N @ k) == pytest.approx(rule.instrument(k, -N @ k))


def test_thread_pool_keeps_the_order(enum2, tol):

    serial = solve_bk(enum2, PolicyRule.zero(1, 1), tol)
    pooled = solve_bk(enum2, PolicyRule.zero(1, 1), tol.replace(max_workers=4))

    assert [s.chosen_subset for s in pooled.solutions] == [s.chosen_subset for s in serial.solutions]
    for a, b in zip(serial.solutions, pooled.solutions):
        np.testing.assert_array_equal(a.N, b.N)


@pytest.mark.slow
@pytest.mark.parametrize("n, m", [(1, 1), (1, 2), (2, 1), (2, 2), (1, 3)])
def test_enumeration_counts(n, m):

    rng = np.random.default_rng(n * 10 + m)

    for _ in range(10):
        eigenvalues = np.sort(rng.uniform(0.05, 0.95, n + m))
        while np.min(np.diff(eigenvalues)) < 0.05:
            eigenvalues = np.sort(rng.uniform(0.05, 0.95, n + m))
        closed = matrix_with_spectrum(rng, eigenvalues)
        model = ModelSpec(n, m, 1.0, 1.0, closed, np.zeros(n + m), random_weights(rng, n + m))

        equilibria = solve_bk(model, PolicyRule.zero(n, m))

        assert equilibria.split.n_S == n + m
        assert len(equilibria.solutions) + len(equilibria.rejected) == comb(n + m, n)
        for first in equilibria.solutions:
            for second in equilibria.solutions:
                if first is not second:
                    assert np.max(np.abs(first.N - second.N)) > 1e-8


def test_observational_equivalence_random_models():

    rng = np.random.default_rng(31)

    for _ in range(50):
        stable = [rng.uniform(0.1, 0.45), rng.uniform(0.55, 0.9)]
        model, rule = model_with_rule(rng, 2, 1, stable, [1.6])

        (bk,) = solve_bk(model, rule).solutions
        restricted = observational_equivalence(rule, bk.N)

        k0 = rng.standard_normal(2)
        y0 = np.concatenate([k0, -bk.N @ k0])

        # 20 periods keep the rounding errors along the root 1.6 small
        full = simulate(model, full_state_law(model, rule), y0, 20)
        reduced = simulate(model, manifold_law(model, restricted, bk.N), k0, 20)

        scale = 1.0 + float(np.max(np.abs(full.y)))
        np.testing.assert_allclose(full.k, reduced.k, atol=1e-6 * scale)
        np.testing.assert_allclose(full.r, reduced.r, atol=1e-6 * scale)


def test_quasi_optimal_loss_is_additive():

    rng = np.random.default_rng(29)

    for _ in range(20):
        n = int(rng.integers(1, 3))
        model = model_with_open_loop(rng, n, 1, beta=rng.uniform(0.9, 0.99))

        (bk,) = solve_bk(model, PolicyRule.zero(n, 1)).solutions
        solution = solve_quasi_optimal(model, bk)

        k0 = rng.standard_normal(n)
        traj = simulate(model, manifold_law(model, solution.rule, bk.N), k0, 50)

        P = solution.P_reduced
        k_T = traj.terminal_state
        tail = model.beta ** traj.horizon * (k_T @ P @ k_T)

        assert traj.discounted_loss + tail == pytest.approx(k0 @ P @ k0, rel=1e-8)
        np.testing.assert_allclose(traj.terminal_y[n:], -bk.N @ k_T, atol=1e-12)


def test_quasi_optimal_without_loss_weights_keeps_the_open_loop(desk1):

    model = desk1.with_changes(Q=np.zeros((2, 2)))

    (bk,) = solve_bk(model, PolicyRule.zero(1, 1)).solutions
    solution = solve_quasi_optimal(model, bk)

    np.testing.assert_allclose(solution.F_reduced, [0.0], atol=1e-10)
    np.testing.assert_allclose(
        solution.riccati.closed_loop_eigenvalues, np.linalg.eigvals(solution.bk.A_reduced), atol=1e-10
    )
