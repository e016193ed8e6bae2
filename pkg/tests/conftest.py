import pytest

from thermohom.geometry import CellGeometry, circle, no_inclusion
from thermohom.mesh import generate_cell_mesh


@pytest.fixture(scope="session")
def circle_geometry():
    return CellGeometry(2, circle(2, 0.25))


@pytest.fixture(scope="session")
def empty_geometry():
    return CellGeometry(2, no_inclusion(2))


@pytest.fixture(scope="session")
def circle_cell_8(circle_geometry):
    return generate_cell_mesh(circle_geometry, 1 / 8)


@pytest.fixture(scope="session")
def circle_cell_16(circle_geometry):
    return generate_cell_mesh(circle_geometry, 1 / 16)


@pytest.fixture(scope="session")
def empty_cell_8(empty_geometry):
    return generate_cell_mesh(empty_geometry, 1 / 8)

