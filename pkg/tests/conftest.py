import numpy as np
import pytest

from asep2d import TorusGeometry, validate_kernel


@pytest.fixture(scope="session")
def sym_nn():
    """Symmetric nearest-neighbor kernel, total rate 1."""
    return validate_kernel({(1, 0): "1/4", (-1, 0): "1/4",
                            (0, 1): "1/4", (0, -1): "1/4"})


@pytest.fixture(scope="session")
def drift_nn():
    """Axis-drift nearest-neighbor kernel: m = (1/2, 0), total rate 3/2."""
    return validate_kernel({(1, 0): "3/4", (-1, 0): "1/4",
                            (0, 1): "1/4", (0, -1): "1/4"})


@pytest.fixture(scope="session")
def tasep_nn():
    """Fully asymmetric kernel with drift along both axes, total rate 1."""
    return validate_kernel({(1, 0): "1/2", (0, 1): "1/2"})


@pytest.fixture(scope="session")
def small_torus():
    return TorusGeometry(3, 2)


def z_ok(estimate, truth, se, n_se=4.0):
    """Whether estimate agrees with truth within n_se standard errors."""
    return np.all(np.abs(np.asarray(estimate) - np.asarray(truth))
                  <= n_se * np.maximum(np.asarray(se), 1e-300))
