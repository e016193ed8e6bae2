import numpy as np
import pytest

from thermohom.geometry import CellGeometry, ellipse
from thermohom.mesh import (PHASE_A, PHASE_B, MeshError, box_mesh, generate_cell_mesh, generate_macro_mesh,
                            write_vtk)


def test_cell_mesh_is_consistent(circle_cell_16):
    base = circle_cell_16.base
    base.check()
    assert np.all(base.volumes > 0)
    assert base.volumes.sum() == pytest.approx(1.0, abs=1e-13)
    assert circle_cell_16.phase_connected("A")


def test_periodic_pairs_match_opposite_faces(circle_cell_8):
    v = circle_cell_8.base.vertices
    a, b = circle_cell_8.periodic_pairs.T
    shift = v[b] - v[a]
    assert np.all(np.isclose(np.sort(np.abs(shift), axis=1), [0, 1]))


def test_interface_nodes_lie_on_circle(circle_cell_16):
    base = circle_cell_16.base
    r = np.linalg.norm(base.vertices[base.interface_nodes] - 0.5, axis=1)
    np.testing.assert_allclose(r, 0.25, atol=1e-12)


def test_interface_normals_point_from_B_to_A(circle_cell_16):
    base = circle_cell_16.base
    a, b = base.interface_cells.T
    assert np.all(base.cell_tag[a] == PHASE_A) and np.all(base.cell_tag[b] == PHASE_B)
    mid = base.vertices[base.interface_facets].mean(axis=1)
    assert np.all(np.einsum("fi,fi->f", base.interface_normals, mid - 0.5) > 0)


def test_inclusion_volume_converges_at_second_order(circle_geometry):
    exact = np.pi / 16
    errs = [abs(generate_cell_mesh(circle_geometry, h).base.phase_volume("B") - exact) for h in (1 / 8, 1 / 16, 1 / 32)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.7), (errs, rates)


def test_ellipse_mesh_volume():
    geo = CellGeometry(2, ellipse(2, (0.3, 0.2)))
    vol = generate_cell_mesh(geo, 1 / 32).base.phase_volume("B")
    assert vol == pytest.approx(np.pi * 0.06, rel=5e-3)


def test_macro_mesh_tiles_template(circle_cell_8):
    eps = 0.25
    m = generate_macro_mesh([(0, 1), (0, 1)], eps, circle_cell_8)
    assert m.n_cells == 16 * circle_cell_8.base.n_cells
    assert m.phase_volume("B") == pytest.approx(circle_cell_8.base.phase_volume("B"), rel=1e-12)
    # every vertex sits at eps * (lattice point + template coordinate); the
    # template node is the periodic representative, so the top faces wrap
    y = circle_cell_8.base.vertices[m.node_template]
    q = m.vertices / eps - y
    np.testing.assert_allclose(q, np.rint(q), atol=1e-12)
    assert set(np.unique(np.rint(q) - m.node_cell)) <= {0.0, 1.0}
    assert len(m.boundary_facets) == 4 * 4 * circle_cell_8.n_per_side


def test_macro_mesh_rejects_non_dividing_eps(circle_cell_8):
    with pytest.raises(MeshError):
        generate_macro_mesh([(0, 1), (0, 1)], 0.3, circle_cell_8)


def test_box_mesh_counts():
    m = box_mesh([(0, 1), (0, 2)], 4)
    assert m.volumes.sum() == pytest.approx(2.0)
    assert np.all(m.cell_tag == PHASE_A)


def test_write_vtk(tmp_path, circle_cell_8):
    path = tmp_path / "cell.vtk"
    base = circle_cell_8.base
    write_vtk(base, path, point_data={"x": base.vertices[:, 0]})
    text = path.read_text()
    assert text.startswith("# vtk DataFile")
    assert f"POINTS {base.n_nodes} double" in text
    assert "SCALARS x double 1" in text
