import numpy as np
import pytest

from hamshape.basis import default_basis
from hamshape.model import ModelParams, State
from hamshape.synthetic import make_synthetic_dataset


@pytest.fixture(scope="session")
def params():
    return ModelParams.from_anthropometry(80.0, 1.78)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def random_state(params, rng, angle_range=1.2, p_scale=5.0):
    q = np.concatenate([rng.normal(0.0, 0.5, 2),
                        rng.uniform(-angle_range, angle_range, 3)])
    p = rng.normal(0.0, p_scale, 5)
    return State(q=q, p=p)


@pytest.fixture(scope="session")
def small_planted_dataset(params):
    """4 subjects, all 8 tasks, torques exactly a PHI controller output."""
    basis = default_basis("phi")
    alpha0 = np.array([0.5, -0.8, 0.3, 0.1, 0.4, -0.2, 0.6, -0.3, 0.15])
    ds = make_synthetic_dataset(params, basis=basis, alpha0=alpha0,
                                n_subjects=4, seed=21)
    return ds, basis, alpha0


@pytest.fixture(scope="session")
def generic_dataset(params):
    """3 subjects with generic (non-planted) torque shapes."""
    return make_synthetic_dataset(params, n_subjects=3, seed=8)
