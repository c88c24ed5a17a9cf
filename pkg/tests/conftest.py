import numpy as np
import pytest

from fcdf import ring
from fcdf.fhe import SchemeParams


@pytest.fixture(scope="session")
def params16():
    return ring.make_params(16, 40)


@pytest.fixture(scope="session")
def params64():
    return ring.make_params(64, 54)


@pytest.fixture(scope="session")
def params4096():
    return ring.make_params(4096, 54)


@pytest.fixture(scope="session")
def scheme_small(params64):
    # tiny ring, default encoding; enough for fast crypto unit tests
    return SchemeParams(params64)


@pytest.fixture(scope="session")
def scheme_default(params4096):
    return SchemeParams(params4096)


@pytest.fixture()
def rng():
    return np.random.default_rng(0xFCDF)
