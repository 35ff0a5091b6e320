"""
Independent oracles and instance generators for the tests.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from relq.model import ModelSpec
from relq.model import PolicyRule


def create_text_file(filename: str | Path, content: str, create_folder: bool = False):
    """
    A function and context manager to create a text file with the given string
    as content. When used as a function, the file needs to be removed explicitly
    with a call to `filename.unlink()` or `os.unlink(filename)`.

    This function can be called as a context manager in which case the file will
    be removed when the context ends.

    >> with create_text_file("model.json", '{"n": 1}'):
    ..     # do something with the file or its content
    """

    class _ContentManager:
        def __init__(self, filename: str | Path, create_folder: bool):
            self.filename = Path(filename)

            if self.filename.exists():
                raise FileExistsError(f"The text file you wanted to create already exists: {filename}")

            if create_folder and not self.filename.parent.exists():
                self.filename.parent.mkdir(parents=True)

            with self.filename.open(mode="w") as fd:
                fd.write(content)

        def __enter__(self):
            return self.filename

        def __exit__(self, exc_type, exc_val, exc_tb):
            self.filename.unlink()

    return _ContentManager(filename, create_folder)


# Oracles -----------------------------------------------------------------------------------------


def value_iteration(A, B, Q, rho, beta, *, tol=1e-12, max_iter=200_000):
    """
    Iterates the Bellman operator in its gain form, P <- Q + rho F'F + beta (A - BF)' P (A - BF),
    from P = I until the step is below tol.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(-1, 1)
    P = np.eye(A.shape[0])
    for _ in range(max_iter):
        F = beta * (B.T @ P @ A) / (rho + beta * (B.T @ P @ B).item())
        closed = A - B @ F
        P_next = Q + rho * F.T @ F + beta * closed.T @ P @ closed
        P_next = (P_next + P_next.T) / 2
        if np.max(np.abs(P_next - P)) < tol * (1.0 + np.max(np.abs(P_next))):
            return P_next, F.ravel()
        P = P_next
    raise RuntimeError("value iteration did not converge")


def scalar_minimal_volatility(a: float, b: float):
    """Closed form for Q = 0, rho = 1, beta = 1 and |a| > 1: P, F and the closed loop 1/a."""
    P = (a * a - 1.0) / (b * b)
    F = (a * a - 1.0) / (a * b)
    return P, F, 1.0 / a


# Generators --------------------------------------------------------------------------------------


def random_controllable(rng: np.random.Generator, d: int, radius: float = 1.5):
    """Returns (A, B) with spectral radius `radius` and a well conditioned controllability matrix."""
    while True:
        A = rng.standard_normal((d, d))
        A *= radius / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-3)
        B = rng.standard_normal((d, 1))
        ctrb = np.hstack([np.linalg.matrix_power(A, k) @ B for k in range(d)])
        if np.linalg.cond(ctrb) < 1e8:
            return A, B


def random_weights(rng: np.random.Generator, d: int):
    G = rng.standard_normal((d, d))
    return G @ G.T / d + 0.1 * np.eye(d)


def matrix_with_spectrum(rng: np.random.Generator, eigenvalues):
    """Returns V diag(eigenvalues) V^-1 for a random, well conditioned V."""
    d = len(eigenvalues)
    while True:
        V = rng.standard_normal((d, d))
        if np.linalg.cond(V) < 50:
            return V @ np.diag(eigenvalues) @ np.linalg.inv(V)


def model_with_rule(rng: np.random.Generator, n: int, m: int, stable, unstable, beta: float = 1.0):
    """
    Returns a model and a rule with F_1m != 0 whose closed loop has the given real eigenvalues.
    """
    closed = matrix_with_spectrum(rng, list(stable) + list(unstable))
    d = n + m
    B = rng.standard_normal((d, 1))
    F = rng.uniform(0.2, 1.0, d) * rng.choice([-1.0, 1.0], d)
    rule = PolicyRule.from_row(F, n)
    model = ModelSpec(
        n=n, m=m, beta=beta, rho=1.0, A=closed + B @ F[np.newaxis, :], B=B, Q=random_weights(rng, d)
    )
    return model, rule


def model_with_open_loop(rng: np.random.Generator, n: int, m: int, beta: float = 0.99):
    """
    Returns a model whose open loop has n stable eigenvalues in (0.2, 0.9) and m unstable ones
    from 1.3 upwards, all real and well separated, with random B and Q.
    """
    stable = 0.2 + 0.35 * np.arange(n) + rng.uniform(0.0, 0.1, n)
    unstable = 1.3 + 0.4 * np.arange(m) + rng.uniform(0.0, 0.2, m)
    d = n + m
    return ModelSpec(
        n=n,
        m=m,
        beta=beta,
        rho=1.0,
        A=matrix_with_spectrum(rng, list(stable) + list(unstable)),
        B=rng.standard_normal((d, 1)),
        Q=random_weights(rng, d),
    )
