import csv

import numpy as np
import pytest

import mms
from thermohom import fem, twoscale
from thermohom.geometry import identity_map
from thermohom.material import MaterialParameters
from thermohom.problem import Problem, ProblemData
from thermohom.twoscale import MicroSolver, MicroTemplate, TwoScaleSolver, micro_step, solve_twoscale

SMOOTH = ProblemData(theta0_A=lambda x: np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]),
                     theta0_B=lambda x, y: np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]) + 0 * y[..., 0],
                     f_u_A=lambda t, x, y: np.broadcast_to([1.0, 0.0], np.shape(x)),
                     f_theta_B=lambda t, x, y: np.ones(np.broadcast_shapes(np.shape(x), np.shape(y))[:-1]))


def _problem(geometry, data, mode="full", T=0.1, n_steps=2):
    mat = MaterialParameters.isotropic(2, lam=(1.0, 2.0), k=(1.0, 0.5), L_AB=0.1, coupling_mode=mode)
    return Problem(geometry, identity_map(2), mat, data, T=T, n_steps=n_steps)


def _solve(pb, cell, **kw):
    kw.setdefault("n_macro", 8)
    kw.setdefault("micro_stride", 2)
    return solve_twoscale(pb, cell, **kw)


def test_zero_data_gives_zero_state(circle_geometry, circle_cell_8):
    sol = _solve(_problem(circle_geometry, ProblemData()), circle_cell_8)
    for s in sol.states:
        # the averaged curvature of a circle vanishes, so nothing drives the system
        assert np.abs(s.u_A).max() <= 1e-12
        assert np.abs(s.theta_A).max() <= 1e-12
        assert np.abs(s.micro).max() <= 1e-12 and np.abs(s.A_h).max() <= 1e-12


def test_zero_horizon_keeps_initial_state(circle_geometry, circle_cell_8):
    sol = _solve(_problem(circle_geometry, SMOOTH, T=0.0), circle_cell_8)
    assert sol.times == [0.0]
    assert np.abs(sol.states[0].u_A).max() == 0.0


@pytest.mark.parametrize("errors", [mms.macro_errors, mms.micro_errors], ids=["macro", "micro"])
def test_manufactured_solution_converges(errors):
    hs, eu, et = errors()
    assert np.all(mms.observed_orders(hs, eu) >= 1.7), eu
    assert np.all(mms.observed_orders(hs, et) >= 1.7), et


def test_micro_temperature_relaxes_to_constant_trace(circle_geometry, circle_cell_8):
    pb = _problem(circle_geometry, ProblemData(), mode="no_dissipation")
    tpl = MicroTemplate(circle_cell_8)
    x = np.array([[0.5, 0.5]])
    X, _, o, _ = MicroSolver(tpl, pb, x).initial(np.zeros(1))
    g = np.array([[0.0, 0.0, 1.0]])
    t = 0.0
    for _ in range(30):
        t += 1.0
        X, o, Ah = micro_step(tpl, pb, x, g, (X, o), t, 1.0)
    theta = X.reshape(tpl.n_I, 3)[:, 2]
    np.testing.assert_allclose(theta, 1.0, atol=1e-8)


def test_superposition_in_data(circle_geometry, circle_cell_8):
    other = ProblemData(theta0_A=lambda x: x[..., 0] * (1 - x[..., 0]) * x[..., 1] * (1 - x[..., 1]),
                        theta0_B=lambda x, y: x[..., 0] * (1 - x[..., 0]) * x[..., 1] * (1 - x[..., 1]) + 0 * y[..., 0],
                        f_theta_A=lambda t, x, y: np.full(np.shape(x)[:-1], 2.0))
    s1 = _solve(_problem(circle_geometry, SMOOTH), circle_cell_8).states[-1]
    s2 = _solve(_problem(circle_geometry, other), circle_cell_8).states[-1]
    s12 = _solve(_problem(circle_geometry, SMOOTH + other.scaled(3.0)), circle_cell_8).states[-1]
    for name in ("u_A", "theta_A", "micro", "A_h"):
        a, b, c = (getattr(s, name) for s in (s1, s2, s12))
        np.testing.assert_allclose(c, a + 3.0 * b, atol=1e-10)


def test_staggered_sweeps_converge_to_condensed(circle_geometry, circle_cell_8):
    pb = _problem(circle_geometry, SMOOTH)
    ref = _solve(pb, circle_cell_8).states[-1]
    stag = _solve(pb, circle_cell_8, coupling="staggered", sweeps=12)
    s = stag.states[-1]
    assert all(inc[-1] < inc[0] for inc in stag.sweep_increments)
    scale = np.abs(ref.theta_A).max()
    assert np.abs(s.theta_A - ref.theta_A).max() <= 1e-6 * scale
    assert np.abs(s.A_h - ref.A_h).max() <= 1e-6 * np.abs(ref.A_h).max()


def test_micro_fields_match_macro_traces(circle_geometry, circle_cell_8):
    sol = _solve(_problem(circle_geometry, SMOOTH), circle_cell_8)
    U, Th = sol.micro_fields(-1)
    s = sol.states[-1]
    gamma = sol.template.gamma
    np.testing.assert_allclose(Th[:, gamma], np.repeat(s.trace[:, 2:], len(gamma), axis=1))
    W = fem.interpolation_matrix(sol.mesh, sol.coarse.vertices)
    np.testing.assert_allclose(s.trace[:, 2], W @ s.theta_A, atol=1e-14)


def test_spooled_trajectory_matches_in_memory(monkeypatch, circle_geometry, circle_cell_8):
    pb = _problem(circle_geometry, SMOOTH)
    ref = _solve(pb, circle_cell_8)
    monkeypatch.setattr(twoscale, "SPOOL_BYTES", 0)
    spooled = _solve(pb, circle_cell_8)
    assert isinstance(spooled.states[-1].micro, np.memmap)
    for a, b in zip(ref.states, spooled.states):
        np.testing.assert_array_equal(a.micro, b.micro)
        np.testing.assert_array_equal(a.u_A, b.u_A)


def test_export_A_h(tmp_path, circle_geometry, circle_cell_8):
    sol = _solve(_problem(circle_geometry, SMOOTH), circle_cell_8)
    path = tmp_path / "A_h.csv"
    sol.export_A_h(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "point", "x0", "x1", "A_h"]
    assert len(rows) == 1 + len(sol.states) * sol.coarse.n_nodes


def test_invalid_settings_are_rejected(circle_geometry, circle_cell_8):
    pb = _problem(circle_geometry, SMOOTH)
    with pytest.raises(ValueError):
        TwoScaleSolver(pb, circle_cell_8, n_macro=8, micro_stride=3)
    with pytest.raises(ValueError):
        TwoScaleSolver(pb, circle_cell_8, n_macro=8, micro_stride=2, coupling="jacobi")
