import dataclasses
import logging

import numpy as np
import pytest

from relq.analysis import commitment_law
from relq.analysis import simulate
from relq.commitment import build_history_rule
from relq.commitment import identify_rule_from_spectrum
from relq.commitment import solve_commitment
from relq.commitment import time_inconsistency_probe
from relq.exceptions import InvalidInputError
from relq.exceptions import NotControllableError
from relq.exceptions import RepeatedTargetsError
from relq.exceptions import UnsupportedError
from relq.model import ModelSpec
from relq.model import PolicyRule
from relq.spectral import controllability_matrix

from helpers import random_controllable
from helpers import random_weights

logger = logging.getLogger(__name__)


def test_commitment_desk1(desk1):

    sol = solve_commitment(desk1)

    assert sol.foc_residual < 1e-8
    assert (sol.n, sol.m) == (1, 1)

    np.testing.assert_allclose(sol.Phi, -sol.F @ sol.state_map)
    np.testing.assert_allclose(sol.state_map @ sol.multiplier_map, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(sol.q0([2.0]), sol.q0_map @ [2.0])
    np.testing.assert_allclose(sol.q0([1.0]), -np.linalg.solve(sol.P_mm, sol.P_mn @ [1.0]))

    np.testing.assert_array_equal(sol.initial_state([1.0]), [1.0, 0.0])
    with pytest.raises(InvalidInputError):
        sol.initial_state([1.0, 2.0])


def test_loss_is_the_value_of_the_initial_state(desk1):

    sol = solve_commitment(desk1)
    k0 = np.array([1.0])

    traj = simulate(desk1, commitment_law(desk1, sol), sol.initial_state(k0), 3000)
    y0 = np.concatenate([k0, sol.q0(k0)])

    np.testing.assert_allclose(traj.y[0], y0)
    assert traj.discounted_loss == pytest.approx(y0 @ sol.P @ y0, rel=1e-6)


def test_history_rule_reproduces_the_path(desk1):

    sol = solve_commitment(desk1)
    rule = build_history_rule(sol, desk1)

    assert rule.parameter_count == 3
    assert not rule.identified
    assert rule.psi_r == pytest.approx(sol.T_closed[1, 1])

    traj = simulate(desk1, commitment_law(desk1, sol), sol.initial_state([1.0]), 200)

    assert rule.replay_residual(traj.k, traj.r) < 1e-8
    assert rule.predict(traj.r[0], traj.k[1], traj.k[0]) == pytest.approx(traj.r[1])


def test_history_rule_needs_a_single_jump_variable(caplog):

    rng = np.random.default_rng(3)
    A, B = random_controllable(rng, 3)
    model = ModelSpec(n=1, m=2, beta=0.99, rho=1.0, A=A, B=B, Q=random_weights(rng, 3))

    sol = solve_commitment(model)

    with pytest.raises(UnsupportedError, match="m = 2"):
        build_history_rule(sol)

    assert "build_history_rule refused" in caplog.text


def test_commitment_needs_full_controllability(decoupled):

    with pytest.raises(NotControllableError, match="not controllable") as exc:
        solve_commitment(decoupled)

    assert exc.value.report.rank == 1


def test_pole_placement(desk1):

    F = identify_rule_from_spectrum(desk1.A, desk1.B, [0.3, 0.6])

    eigenvalues = np.sort(np.linalg.eigvals(desk1.A - desk1.B @ F[np.newaxis, :]).real)
    np.testing.assert_allclose(eigenvalues, [0.3, 0.6], atol=1e-10)


def test_pole_placement_recovers_a_rule(desk1):

    closed = desk1.closed_loop(PolicyRule([0.7], [0.0]))

    F = identify_rule_from_spectrum(desk1.A, desk1.B, np.linalg.eigvals(closed))

    np.testing.assert_allclose(F, [0.7, 0.0], atol=1e-9)


def test_pole_placement_complex_targets(desk1):

    F = identify_rule_from_spectrum(desk1.A, desk1.B, [0.5 + 0.2j, 0.5 - 0.2j])

    eigenvalues = np.linalg.eigvals(desk1.A - desk1.B @ F[np.newaxis, :])
    np.testing.assert_allclose(np.sort(np.abs(eigenvalues)), [np.sqrt(0.29)] * 2, atol=1e-10)


def test_pole_placement_refusals(desk1, decoupled):

    with pytest.raises(RepeatedTargetsError):
        identify_rule_from_spectrum(desk1.A, desk1.B, [0.5, 0.5])

    with pytest.raises(InvalidInputError, match="conjugate"):
        identify_rule_from_spectrum(desk1.A, desk1.B, [0.5 + 0.1j, 0.3])

    with pytest.raises(InvalidInputError, match="Expected 2"):
        identify_rule_from_spectrum(desk1.A, desk1.B, [0.5])

    with pytest.raises(NotControllableError):
        identify_rule_from_spectrum(decoupled.A, decoupled.B, [0.3, 0.6])


@pytest.mark.slow
def test_pole_placement_random_round_trip():

    rng = np.random.default_rng(11)

    for _ in range(100):
        d = int(rng.integers(1, 5))
        A, B = random_controllable(rng, d)
        if np.linalg.cond(controllability_matrix(A, B)) > 1e4:
            continue
        F = rng.standard_normal(d)
        targets = np.linalg.eigvals(A - B @ F[np.newaxis, :])
        gaps = [abs(a - b) for i, a in enumerate(targets) for b in targets[i + 1:]]
        if gaps and min(gaps) < 1e-3:
            continue

        recovered = identify_rule_from_spectrum(A, B, targets)

        np.testing.assert_allclose(recovered, F, atol=1e-6 * (1 + np.max(np.abs(F))))


def test_time_inconsistency_probe(desk1):

    sol = solve_commitment(desk1)

    at_start = time_inconsistency_probe(sol, desk1, 0, k0=[1.0])

    np.testing.assert_allclose(at_start.q_jump, [0.0], atol=1e-15)
    assert at_start.loss_difference == pytest.approx(0.0, abs=1e-12)

    later = time_inconsistency_probe(sol, desk1, 5, k0=[1.0])

    assert abs(later.mu_q_at_reset[0]) > 0
    assert abs(later.q_jump[0]) > 0
    assert later.reset_loss <= later.continuation_loss + 1e-12
    assert later.committed.bound_satisfied
    assert later.reset.bound_satisfied


def test_time_inconsistency_probe_reset_time(desk1):

    sol = solve_commitment(desk1)

    with pytest.raises(InvalidInputError, match="non-negative"):
        time_inconsistency_probe(sol, desk1, -1)

    with pytest.raises(InvalidInputError, match="smaller than the horizon"):
        time_inconsistency_probe(sol, desk1, 100, horizon=100)


def test_loss_is_additive_over_the_horizon():

    rng = np.random.default_rng(23)
    checked = 0

    while checked < 20:
        d = int(rng.integers(2, 4))
        n = int(rng.integers(1, d))
        A, B = random_controllable(rng, d)
        if np.linalg.cond(controllability_matrix(A, B)) > 1e4:
            continue
        model = ModelSpec(n=n, m=d - n, beta=rng.uniform(0.95, 0.99), rho=1.0, A=A, B=B, Q=random_weights(rng, d))

        sol = solve_commitment(model)
        traj = simulate(model, commitment_law(model, sol), sol.initial_state(rng.standard_normal(n)), 50)

        y0, y_T = traj.y[0], traj.terminal_y
        tail = model.beta ** traj.horizon * (y_T @ sol.P @ y_T)

        assert traj.discounted_loss + tail == pytest.approx(y0 @ sol.P @ y0, rel=1e-8)
        np.testing.assert_allclose(y_T, sol.state_map @ traj.terminal_state)
        checked += 1


@pytest.mark.slow
def test_history_rule_random_instances():

    rng = np.random.default_rng(37)
    checked = 0

    while checked < 20:
        n = int(rng.integers(1, 4))
        A, B = random_controllable(rng, n + 1)
        if np.linalg.cond(controllability_matrix(A, B)) > 1e4:
            continue
        model = ModelSpec(n=n, m=1, beta=0.99, rho=1.0, A=A, B=B, Q=random_weights(rng, n + 1))

        sol = solve_commitment(model)
        rule = build_history_rule(sol, model)
        traj = simulate(model, commitment_law(model, sol), sol.initial_state(np.ones(n)), 500)

        assert rule.parameter_count == 2 * n + 1
        assert rule.replay_residual(traj.k, traj.r) < 1e-8 * max(1.0, float(np.max(np.abs(traj.r))))
        checked += 1


def test_history_rule_without_lagged_instrument(desk1):

    sol = solve_commitment(desk1)
    T_closed = np.array(sol.T_closed)
    T_closed[1, 1] = 0.0
    degenerate = dataclasses.replace(sol, T_closed=T_closed)

    rule = build_history_rule(degenerate, desk1)

    assert rule.psi_r == 0.0
    np.testing.assert_allclose(rule.psi_k0, sol.Phi_k)
    np.testing.assert_allclose(rule.psi_k1, sol.Phi_mu[0] * T_closed[1, :1])

    traj = simulate(desk1, commitment_law(desk1, degenerate), degenerate.initial_state([1.0]), 50)

    assert rule.replay_residual(traj.k, traj.r) < 1e-10 * max(1.0, float(np.max(np.abs(traj.r))))
    assert rule.predict(5.0, traj.k[1], traj.k[0]) == rule.predict(0.0, traj.k[1], traj.k[0])
