import pytest

from glvortex.grid import Grid2D
from glvortex.profile import default_profile
from glvortex.sector import RadialGrid


@pytest.fixture(scope="session")
def profile():
    return default_profile()


@pytest.fixture(scope="session")
def grid512():
    return Grid2D(30.0, 512)


@pytest.fixture(scope="session")
def grid256():
    return Grid2D(30.0, 256)


@pytest.fixture(scope="session")
def grid128():
    return Grid2D(30.0, 128)


@pytest.fixture(scope="session")
def rgrid():
    return RadialGrid.graded()


@pytest.fixture(scope="session")
def coarse_rgrid():
    # short and coarse, for dense cross-checks
    return RadialGrid.graded(segments=((5.0, 0.05), (20.0, 0.25), (40.0, 1.0)))
