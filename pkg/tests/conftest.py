import numpy as np
import pytest

from flexdeepc.beam_fe import BeamModel, assemble
from flexdeepc.scenarios import ScenarioConfig, collect_from_config


@pytest.fixture(scope="session")
def model():
    return BeamModel()


@pytest.fixture(scope="session")
def system(model):
    return assemble(model)


@pytest.fixture(scope="session")
def scenario_config():
    return ScenarioConfig()


@pytest.fixture(scope="session")
def spacecraft_data(scenario_config):
    return collect_from_config(scenario_config)


def random_lti(rng, n=3, m=1, p=1):
    """Random stable discrete-time system that is controllable and observable."""
    while True:
        a = rng.normal(size=(n, n))
        a *= 0.9 / max(1e-9, np.max(np.abs(np.linalg.eigvals(a))))
        b = rng.normal(size=(n, m))
        c = rng.normal(size=(p, n))
        ctrb = np.hstack([np.linalg.matrix_power(a, i) @ b for i in range(n)])
        obsv = np.vstack([c @ np.linalg.matrix_power(a, i) for i in range(n)])
        if np.linalg.matrix_rank(ctrb) == n and np.linalg.matrix_rank(obsv) == n:
            return a, b, c


def simulate_lti(a, b, c, u, x0=None):
    """``y_k = C x_k``, then ``x_{k+1} = A x_k + B u_k``."""
    x = np.zeros(a.shape[0]) if x0 is None else np.array(x0, dtype=float)
    u = np.asarray(u, dtype=float).reshape(len(u), -1)
    ys = []
    for uk in u:
        ys.append(c @ x)
        x = a @ x + b @ uk
    return np.array(ys).reshape(len(u), -1)
