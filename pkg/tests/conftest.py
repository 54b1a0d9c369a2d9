import numpy as np
import pytest

from mmmcmc import model


@pytest.fixture
def butane():
    return model.butane_system()


@pytest.fixture
def toy_1d():
    return model.QuadraticTestSystem(kappa=5.0, dim=1)


def perturbed_configs(params, n, scale=0.06, seed=0):
    """Random finite-temperature-like distortions of the ideal chain."""
    rng = np.random.default_rng(seed)
    x0 = model.ideal_configuration(params)
    return [x0 + scale * rng.standard_normal(x0.size) for _ in range(n)]


def random_rotation(rng):
    """Haar-ish random rotation matrix from a QR decomposition."""
    a = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def apply_rigid_motion(x, rotation, shift):
    r = x.reshape(-1, 3) @ rotation.T + shift
    return r.reshape(-1)
