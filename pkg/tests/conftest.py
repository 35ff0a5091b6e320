import logging
from pathlib import Path

import numpy as np
import pytest

from relq.config import get_tolerances
from relq.model import ModelSpec
from relq.settings import ENV_RELQ_CONFIG

logger = logging.getLogger(__name__)

HERE = Path(__file__).parent.resolve()


@pytest.fixture(autouse=True)
def no_local_settings(monkeypatch):
    monkeypatch.delenv(ENV_RELQ_CONFIG, raising=False)


@pytest.fixture
def tol():
    return get_tolerances()


@pytest.fixture
def desk1():
    """One stable and one unstable open-loop eigenvalue, controllable."""
    return ModelSpec(
        n=1,
        m=1,
        beta=0.99,
        rho=1.0,
        A=[[0.5, 0.4], [0.3, 1.2]],
        B=[[0.2], [1.0]],
        Q=[[1.0, 0.3], [0.3, 0.5]],
    )


@pytest.fixture
def enum2():
    """Open loop with eigenvalues 0.2 and 0.5, both stable, and no instrument."""
    return ModelSpec(
        n=1,
        m=1,
        beta=1.0,
        rho=1.0,
        A=[[0.4, -0.1], [-0.2, 0.3]],
        B=[[0.0], [0.0]],
        Q=np.eye(2),
    )


@pytest.fixture
def tri3():
    return ModelSpec(
        n=1,
        m=2,
        beta=1.0,
        rho=1.0,
        A=[[0.5, 0.0, 0.0], [1.0, 2.0, 0.0], [0.0, 1.0, 3.0]],
        B=[[0.0], [0.0], [0.0]],
        Q=np.eye(3),
    )


@pytest.fixture
def decoupled():
    """The unstable jump variable can not be reached by the instrument."""
    return ModelSpec(
        n=1,
        m=1,
        beta=0.99,
        rho=1.0,
        A=np.diag([0.9, 1.5]),
        B=[[1.0], [0.0]],
        Q=np.diag([1.0, 0.0]),
    )


@pytest.fixture
def desk1_file():
    return HERE / "data" / "desk1.json"
