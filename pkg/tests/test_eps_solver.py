import numpy as np
import pytest

import mms
from thermohom.eps_solver import EpsSolver, build_eps_coefficients, initial_temperature, node_phase, solve_eps
from thermohom.geometry import circle, identity_map
from thermohom.material import MaterialParameters
from thermohom.mesh import PHASE_B, generate_macro_mesh
from thermohom.problem import Problem, ProblemData

OMEGA = [(0.0, 1.0), (0.0, 1.0)]


@pytest.fixture(scope="module")
def circle_macro(circle_cell_8):
    return generate_macro_mesh(OMEGA, 0.25, circle_cell_8)


def _problem(geometry, data, mode="full", smap=None, T=0.1, n_steps=2, **mat):
    material = MaterialParameters.isotropic(2, L_AB=0.1, coupling_mode=mode, **mat)
    return Problem(geometry, smap or identity_map(2), material, data, OMEGA, T, n_steps)


def test_zero_data_gives_zero_state(empty_geometry, empty_cell_8):
    mesh = generate_macro_mesh(OMEGA, 0.25, empty_cell_8)
    sol = solve_eps(_problem(empty_geometry, ProblemData(), T=0.25, n_steps=3), mesh, 0.25)
    assert len(sol.U) == 4
    for U, Th in zip(sol.U, sol.Theta):
        assert np.abs(U).max() == 0.0 and np.abs(Th).max() == 0.0


def test_identity_map_loads_only_through_curvature(circle_geometry, circle_macro):
    # a still interface releases no latent heat but still carries the curvature load
    pb = _problem(circle_geometry, ProblemData(), mode="no_dissipation")
    sol = solve_eps(pb, circle_macro, 0.25)
    assert np.abs(sol.Theta[-1]).max() == 0.0
    assert np.abs(sol.U[-1]).max() > 0.0


def test_uncoupled_heat_leaves_displacement_at_rest(empty_geometry, empty_cell_8):
    mesh = generate_macro_mesh(OMEGA, 0.25, empty_cell_8)
    data = ProblemData(theta0_A=lambda x: np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]))
    pb = _problem(empty_geometry, data, mode="no_dissipation", alpha=(0.0, 0.0))
    sol = solve_eps(pb, mesh, 0.25)
    assert np.abs(sol.U[-1]).max() == 0.0
    # pure heat equation with zero sources decays in the maximum norm
    assert 0 < np.abs(sol.Theta[-1]).max() < np.abs(sol.Theta[0]).max()


def test_zero_horizon_returns_initial_state(circle_geometry, circle_macro):
    data = ProblemData(theta0_A=lambda x: np.ones(len(x)))
    sol = solve_eps(_problem(circle_geometry, data, T=0.0, n_steps=4), circle_macro, 0.25)
    assert sol.times == [0.0]
    np.testing.assert_array_equal(sol.Theta[0][circle_macro.boundary_nodes], 0.0)


def test_manufactured_solution_converges_at_second_order():
    hs, eu, et = mms.eps_solver_errors()
    assert np.all(mms.observed_orders(hs, eu) >= 1.7), eu
    assert np.all(mms.observed_orders(hs, et) >= 1.7), et


def test_identity_coefficients_keep_matrix_phase_untouched(circle_macro):
    mat = MaterialParameters.isotropic(2, k=(2.0, 3.0))
    co = build_eps_coefficients(0.3, circle_macro, mat, identity_map(2), 0.25, circle(2, 0.25))
    A = circle_macro.cell_tag != PHASE_B
    np.testing.assert_array_equal(co.K[A], np.broadcast_to(mat.K_A, co.K[A].shape))
    # phase B carries the eps^2 conductivity scaling
    np.testing.assert_allclose(co.K[~A], np.broadcast_to(0.25 ** 2 * 3.0 * np.eye(2), co.K[~A].shape))
    np.testing.assert_array_equal(co.v, 0.0)
    np.testing.assert_array_equal(co.facet_heat, 0.0)


def test_curvature_force_balances_on_each_inclusion(circle_macro):
    co = build_eps_coefficients(0.0, circle_macro, MaterialParameters.isotropic(2), identity_map(2), 0.25,
                                circle(2, 0.25))
    # a closed interface under constant normal load carries zero net force
    lengths = np.linalg.norm(np.diff(circle_macro.vertices[circle_macro.interface_facets], axis=1)[:, 0], axis=1)
    net = np.einsum("fi,f->i", co.facet_force, lengths)
    np.testing.assert_allclose(net, 0.0, atol=1e-10)


def test_initial_temperature_uses_inclusion_profile(circle_macro):
    data = ProblemData(theta0_A=lambda x: np.zeros(len(x)), theta0_B=lambda x, y: np.ones(len(y)))
    th = initial_temperature(circle_macro, data, 0.25)
    inner = node_phase(circle_macro) == 1
    assert inner.any()
    assert np.all(th[inner] == 1.0) and np.all(th[~inner] == 0.0)


def test_time_step_must_be_positive(circle_geometry, circle_macro):
    solver = EpsSolver(_problem(circle_geometry, ProblemData()), circle_macro, 0.25)
    with pytest.raises(ValueError):
        solver.step(solver.initial_state(), 0.0)


def test_halving_dt_is_first_order(circle_geometry, circle_macro):
    data = ProblemData(theta0_A=lambda x: np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]),
                       f_u_A=lambda t, x, y: np.broadcast_to([1.0, 0.0], np.shape(x)))
    finals = [solve_eps(_problem(circle_geometry, data, T=0.1, n_steps=n), circle_macro, 0.25).Theta[-1]
              for n in (2, 4, 8)]
    d1, d2 = np.abs(finals[1] - finals[0]).max(), np.abs(finals[2] - finals[1]).max()
    assert 0.7 <= np.log2(d1 / d2) <= 1.3
