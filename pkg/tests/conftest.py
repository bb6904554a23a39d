import numpy as np
import pytest

from fordn.geometry import (dictionary_from_directions,
                            generate_gradient_scheme, tessellate_hemisphere)


@pytest.fixture(scope="session")
def scheme30():
    return generate_gradient_scheme(30, 1000.0, seed=20)


@pytest.fixture(scope="session")
def coarse_basis():
    return tessellate_hemisphere(6)


@pytest.fixture(scope="session")
def dense_basis():
    return tessellate_hemisphere(12)


@pytest.fixture(scope="session")
def coarse_dict(scheme30, coarse_basis):
    return dictionary_from_directions(scheme30, coarse_basis)


@pytest.fixture(scope="session")
def dense_dict(scheme30, dense_basis):
    return dictionary_from_directions(scheme30, dense_basis)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
