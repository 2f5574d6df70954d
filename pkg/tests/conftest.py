import numpy as np
import pytest

from hyhup import backend


@pytest.fixture(scope="session", params=backend.available())
def kern(request):
    """Each kernel backend available in this installation."""
    return backend.load(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_spd(rng, n, shift=None):
    G = rng.standard_normal((n, n))
    return G @ G.T + (n if shift is None else shift) * np.eye(n)
