import logging

import numpy as np
import pandas as pd
import pytest

import relq.analysis
from relq.analysis import check_boundedness
from relq.analysis import commitment_law
from relq.analysis import covariance_comparison
from relq.analysis import default_equilibrium
from relq.analysis import export_csv
from relq.analysis import full_state_law
from relq.analysis import identification_experiment_bk
from relq.analysis import identification_experiment_commitment
from relq.analysis import manifold_law
from relq.analysis import minimal_volatility_experiment
from relq.analysis import sample_moments
from relq.analysis import simulate
from relq.commitment import solve_commitment
from relq.exceptions import IdentificationRefused
from relq.exceptions import InvalidInputError
from relq.exceptions import NoEquilibriumError
from relq.model import ModelSpec
from relq.model import PolicyRule
from relq.model import load_model
from relq.spectral import controllability_matrix
from relq.spectral import numerical_rank

from helpers import model_with_open_loop
from helpers import random_controllable

logger = logging.getLogger(__name__)


def test_simulate_full_state(desk1):

    traj = simulate(desk1, full_state_law(desk1, PolicyRule([0.7], [0.0])), [1.0, 0.0], 10)

    assert traj.horizon == 10
    assert traj.k.shape == (10, 1)
    assert traj.q.shape == (10, 1)
    assert traj.r.shape == (10,)
    assert traj.mu_q is None
    assert not traj.divergent

    np.testing.assert_allclose(traj.y[1], [0.36, -0.4])
    np.testing.assert_allclose(traj.r, -0.7 * traj.k[:, 0])


def test_simulate_truncates_a_divergent_path(desk1, tol, caplog):

    law = full_state_law(desk1, PolicyRule([5.0], [0.0]))

    traj = simulate(desk1, law, [1.0, 1.0], 500, tol.replace(divergence_norm=1e3))

    assert traj.divergent
    assert traj.horizon < 500
    assert traj.growth_exponent == np.inf
    assert "diverged" in caplog.text


def test_simulate_input_checks(desk1):

    law = full_state_law(desk1, PolicyRule.zero(1, 1))

    with pytest.raises(InvalidInputError, match="at least 1"):
        simulate(desk1, law, [1.0, 0.0], 0)
    with pytest.raises(InvalidInputError, match="dimension"):
        simulate(desk1, law, [1.0], 10)


def test_boundedness(desk1):

    sol = solve_commitment(desk1)
    law = commitment_law(desk1, sol)

    report = check_boundedness(simulate(desk1, law, sol.initial_state([1.0]), 200), desk1.beta)

    assert report.bound_satisfied
    assert report.bound == pytest.approx(np.log(1 / np.sqrt(0.99)))

    with pytest.raises(InvalidInputError, match="at least 50"):
        check_boundedness(simulate(desk1, law, sol.initial_state([1.0]), 10), desk1.beta)


def test_manifold_path_and_moments(desk1):

    N = default_equilibrium(desk1).N

    traj = simulate(desk1, manifold_law(desk1, PolicyRule.zero(1, 1), N), [1.0], 100)

    np.testing.assert_allclose(traj.q, -traj.k @ N.T, atol=1e-15)

    moments, linear_map = sample_moments(traj)

    assert moments.shape == (2, 2)
    np.testing.assert_allclose(linear_map, -N)

    with pytest.raises(InvalidInputError):
        manifold_law(desk1, PolicyRule.zero(1, 1), np.ones((2, 2)))


def test_export_csv(tmp_path, desk1_file):

    model = load_model(desk1_file)
    sol = solve_commitment(model)
    traj = simulate(model, commitment_law(model, sol), sol.initial_state([1.0]), 5)

    path = tmp_path / "path.csv"
    export_csv(traj, path, model=model)

    frame = pd.read_csv(path)

    assert list(frame.columns) == [
        "t",
        "capital",
        "inflation",
        "mu_inflation",
        "r",
        "capital_level",
        "inflation_level",
        "r_level",
    ]
    assert len(frame) == 5
    np.testing.assert_array_equal(frame["r"].to_numpy(), traj.r)


def test_identification_bk(desk1):

    N = default_equilibrium(desk1).N

    report = identification_experiment_bk(desk1, PolicyRule([0.7], [0.3]), N, T=100)

    assert report.observationally_equivalent
    assert report.r_path_difference < 1e-10
    assert report.k_path_difference < 1e-10
    assert report.regressor_rank == 1
    assert report.rank_deficiency == 1
    assert report.restricted_rule.restricted


def test_identification_commitment(desk1):

    sol = solve_commitment(desk1)

    report = identification_experiment_commitment(desk1, sol)

    assert report.full_rank
    assert report.attempts == 1
    assert report.recovered
    np.testing.assert_allclose(report.Phi_estimate, sol.Phi, atol=1e-6)


def test_identification_commitment_refuses_a_zero_start(desk1):

    sol = solve_commitment(desk1)

    with pytest.raises(IdentificationRefused, match="k0 = 0"):
        identification_experiment_commitment(desk1, sol, k0=[0.0])


def test_identification_commitment_retries(desk1, mocker, caplog):

    calls = []

    def first_call_rank_deficient(matrix, rtol):
        calls.append(matrix)
        rank, singular_values = numerical_rank(matrix, rtol)
        return (rank - 1, singular_values) if len(calls) == 1 else (rank, singular_values)

    mocker.patch.object(relq.analysis, "numerical_rank", side_effect=first_call_rank_deficient)

    report = identification_experiment_commitment(desk1, solve_commitment(desk1), k0=[1.0])

    assert report.attempts == 2
    assert report.recovered
    assert report.k0[0] != 1.0
    assert "retrying with a perturbed k0" in caplog.text


def test_identification_commitment_gives_up(desk1, tol, mocker):

    mocker.patch.object(relq.analysis, "numerical_rank", return_value=(1, np.array([1.0, 0.0])))

    report = identification_experiment_commitment(desk1, solve_commitment(desk1), tol=tol.replace(retries=2))

    assert report.attempts == 3
    assert not report.full_rank
    assert not report.recovered
    assert report.Phi_estimate is None


def test_covariance_comparison(desk1):

    report = covariance_comparison(desk1, T=200)

    assert report.perturbation == 0.1
    assert report.bk_map_fixed
    assert report.bk_map_difference < 1e-10
    assert report.commitment_sensitive
    assert report.commitment_cross_moment_difference > 1e-6
    np.testing.assert_allclose(report.bk_baseline_map, -report.N)


def test_minimal_volatility(desk1):

    report = minimal_volatility_experiment(desk1)

    assert report.mirror.passed
    np.testing.assert_allclose(
        np.sort(np.abs(report.closed_loop_eigenvalues)),
        [0.85 - np.sqrt(0.2425), 1 / (0.99 * (0.85 + np.sqrt(0.2425)))],
        atol=1e-8,
    )


def test_covariance_comparison_random_instances():

    rng = np.random.default_rng(17)

    for m in (1, 2, 1, 2):
        model = model_with_open_loop(rng, 1, m)

        report = covariance_comparison(model, T=200)

        assert report.N.shape == (m, 1)
        assert report.bk_map_fixed
        np.testing.assert_allclose(report.bk_baseline_map, -report.N, atol=1e-10)
        assert report.commitment_sensitive


def test_covariance_comparison_needs_an_equilibrium():

    # both open-loop roots are unstable
    explosive = ModelSpec(n=1, m=1, beta=0.99, rho=1.0, A=[[1.5, 0.2], [0.1, 2.0]], B=[0.3, 1.0], Q=np.eye(2))

    with pytest.raises(NoEquilibriumError, match="no rational expectations equilibrium"):
        covariance_comparison(explosive, T=100)

    # the unstable root does not load on q, its subset is rejected
    rejected = ModelSpec(n=1, m=1, beta=0.99, rho=1.0, A=np.diag([2.0, 0.5]), B=[1.0, 1.0], Q=np.eye(2))

    with pytest.raises(NoEquilibriumError, match="no admissible equilibrium"):
        covariance_comparison(rejected, T=100)


@pytest.mark.slow
def test_minimal_volatility_random_instances():

    rng = np.random.default_rng(5)
    checked = 0

    while checked < 50:
        beta = [1.0, 0.95][checked % 2]
        threshold = 1 / np.sqrt(beta)
        A, B = random_controllable(rng, 3)
        eigenvalues, vectors = np.linalg.eig(A)
        moduli = np.abs(eigenvalues)
        if np.min(np.abs(moduli - threshold)) < 0.05 or np.linalg.cond(vectors) > 1e3:
            continue
        if np.linalg.cond(controllability_matrix(A, B)) > 1e4:
            continue

        model = ModelSpec(n=1, m=2, beta=beta, rho=1.0, A=A, B=B, Q=np.zeros((3, 3)))

        report = minimal_volatility_experiment(model)

        assert report.mirror.passed, report.mirror.max_residual

        expected = [value if value < threshold else 1 / (beta * value) for value in moduli]
        np.testing.assert_allclose(np.sort(np.abs(report.closed_loop_eigenvalues)), np.sort(expected), atol=1e-6)
        checked += 1


def test_exogenous_path_full_state(desk1):

    gamma = np.array([[0.5], [1.0]])
    z = np.array([1.0, 0.0, -0.5, 0.25, 0.0])
    rule = PolicyRule([0.7], [0.0])
    model = desk1.with_changes(gamma=gamma)

    traj = simulate(model, full_state_law(model, rule), [1.0, 0.0], 5, z_path=z)

    closed = model.closed_loop(rule)
    y = np.array([1.0, 0.0])
    expected = []
    for t in range(5):
        expected.append(y)
        y = closed @ y + gamma[:, 0] * z[t]

    np.testing.assert_allclose(traj.y, expected, atol=1e-14)
    np.testing.assert_allclose(traj.terminal_y, y, atol=1e-14)
    np.testing.assert_allclose(traj.r, -0.7 * traj.k[:, 0])

    # the path stored on the model is the default
    stored = desk1.with_changes(gamma=gamma, z_path=z.reshape(-1, 1))

    default = simulate(stored, full_state_law(stored, rule), [1.0, 0.0], 5)

    np.testing.assert_array_equal(default.y, traj.y)


def test_exogenous_path_commitment(desk1):

    gamma = np.array([[0.5], [1.0]])
    z = np.array([0.3, -1.0, 0.0, 0.7, 0.2, -0.4])
    model = desk1.with_changes(gamma=gamma)
    sol = solve_commitment(model)

    traj = simulate(model, commitment_law(model, sol), sol.initial_state([1.0]), 6, z_path=z)

    closed = model.A - model.B @ sol.F[np.newaxis, :]
    y = np.concatenate([[1.0], sol.q0([1.0])])
    expected = []
    for t in range(6):
        expected.append(y)
        y = closed @ y + gamma[:, 0] * z[t]
    expected = np.array(expected)

    np.testing.assert_allclose(traj.y, expected, atol=1e-12)
    np.testing.assert_allclose(traj.mu_q[:, 0], expected @ sol.P[1, :], atol=1e-12)
    np.testing.assert_allclose(traj.r, -expected @ sol.F, atol=1e-12)


def test_exogenous_path_checks(desk1):

    model = desk1.with_changes(gamma=[[0.5], [1.0]])
    law = full_state_law(model, PolicyRule.zero(1, 1))

    with pytest.raises(InvalidInputError, match="periods"):
        simulate(model, law, [1.0, 0.0], 10, z_path=[1.0, 2.0])
    with pytest.raises(InvalidInputError, match="column"):
        simulate(model, law, [1.0, 0.0], 2, z_path=[[1.0, 0.0], [0.0, 1.0]])


def test_paths_are_linear_in_the_initial_state(desk1):

    sol = solve_commitment(desk1)
    law = commitment_law(desk1, sol)

    first = simulate(desk1, law, sol.initial_state([1.0]), 100)
    second = simulate(desk1, law, sol.initial_state([-0.3]), 100)
    scaled = simulate(desk1, law, sol.initial_state([2.5]), 100)
    both = simulate(desk1, law, sol.initial_state([0.7]), 100)

    np.testing.assert_allclose(scaled.states, 2.5 * first.states, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(both.states, first.states + second.states, rtol=1e-10, atol=1e-12)
    assert scaled.discounted_loss == pytest.approx(2.5 ** 2 * first.discounted_loss, rel=1e-10)

    law = full_state_law(desk1, PolicyRule([0.7], [0.0]))

    first = simulate(desk1, law, [1.0, 0.5], 100)
    scaled = simulate(desk1, law, [-2.0, -1.0], 100)

    np.testing.assert_allclose(scaled.y, -2.0 * first.y, rtol=1e-10, atol=1e-12)
