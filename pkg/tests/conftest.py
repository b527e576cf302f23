import pathlib

import numpy as np
import pytest

import safegrid as sg

CONFIG_DIR = pathlib.Path(__file__).resolve().parent.parent / "configs"
FOURBUS = CONFIG_DIR / "fourbus.yaml"


@pytest.fixture(scope="session")
def fourbus_spec():
    return sg.load_network(FOURBUS)


@pytest.fixture(scope="session")
def fourbus_model(fourbus_spec):
    return sg.assemble_state_space(fourbus_spec)


@pytest.fixture(scope="session")
def fourbus_weights(fourbus_model):
    return sg.DesignWeights.identity(fourbus_model)


@pytest.fixture(scope="session")
def fourbus_centralized(fourbus_model, fourbus_weights):
    p, k = sg.solve_are(fourbus_model, fourbus_weights)
    return p, k


def random_stable_system(rng, m):
    """Random Hurwitz matrix: shift a random matrix left of its abscissa."""
    a = rng.standard_normal((m, m))
    margin = rng.uniform(0.05, 1.0)
    a -= (np.max(np.linalg.eigvals(a).real) + margin) * np.eye(m)
    return a


def random_spd(rng, m, floor=0.1):
    b = rng.standard_normal((m, m))
    return b @ b.T + floor * np.eye(m)
