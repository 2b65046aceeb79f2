from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from skelstat import gp_to_lp, load_gp, load_lp

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def fixture_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def ellipsoid_gp():
    return load_gp(FIXTURES / "ellipsoid_5x9_gp.json")


@pytest.fixture(scope="session")
def ellipsoid_lp(ellipsoid_gp):
    return gp_to_lp(ellipsoid_gp)


@pytest.fixture(scope="session")
def template_lp():
    return load_lp(FIXTURES / "study_template_lp.json")


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_unit(rng, n=None):
    v = rng.normal(size=(3,) if n is None else (n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)
