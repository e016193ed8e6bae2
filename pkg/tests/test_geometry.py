import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermohom.geometry import (MOVEMENT_COLUMNS, CellGeometry, circle, eval_transformation, identity_map,
                                make_map, map_from_expressions, movement_sup_norms, unfold,
                                verify_movement_bounds, check_admissibility, ellipse)

EPS = [1 / 4, 1 / 8, 1 / 16]


@given(st.lists(st.floats(0, 1), min_size=2, max_size=2), st.sampled_from([1 / 2, 1 / 4, 1 / 8, 1 / 16, 0.3]))
def test_unfold_recombines(x, eps):
    k, y = unfold(np.array([x]), eps)
    assert np.all((y >= 0) & (y < 1))
    np.testing.assert_allclose(eps * (k + y), [x], atol=1e-12)


def test_unfold_grid_points_land_in_upper_cell():
    k, y = unfold(np.array([[0.25, 0.5]]), 0.25)
    assert k.tolist() == [[1, 2]]
    assert np.all(y == 0.0)


def test_unfold_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        unfold(np.zeros((1, 2)), 0.0)


def test_identity_map_fields_are_trivial():
    smap = identity_map(2)
    x = np.random.default_rng(0).random((20, 2))
    f = eval_transformation(smap, 0.7, x, 0.125, circle(2, 0.25))
    np.testing.assert_array_equal(f.F, np.broadcast_to(np.eye(2), f.F.shape))
    np.testing.assert_array_equal(f.J, 1.0)
    np.testing.assert_array_equal(f.v, 0.0)


def test_curvature_of_circle_interface():
    ls = circle(2, 0.25)
    y = ls.sample_interface(16)
    cf = identity_map(2).cell_fields(0.0, np.zeros_like(y), y, ls)
    # -div(n) with n pointing out of the inclusion
    np.testing.assert_allclose(cf.H, -1 / 0.25, rtol=1e-10)
    np.testing.assert_array_equal(cf.W, 0.0)


@pytest.mark.parametrize("preset", ["identity", "radial-growth"])
def test_presets_are_admissible(preset):
    geo = CellGeometry(2, circle(2, 0.25), clearance=0.2)
    rep = check_admissibility(make_map(preset, 2), geo, t_max=0.25)
    assert rep.passed, rep.lines()


def test_radial_growth_folds_beyond_study_horizon():
    geo = CellGeometry(2, circle(2, 0.25), clearance=0.2)
    rep = check_admissibility(make_map("radial-growth", 2), geo, t_max=1.0)
    assert "8_det_bounds" in rep.failures()


def test_boundary_shift_violates_admissibility():
    geo = CellGeometry(2, circle(2, 0.25))
    smap = map_from_expressions(["y0 + 0.05*t", "y1"], 2)
    rep = check_admissibility(smap, geo, t_max=0.25)
    assert not rep.passed
    assert "5_boundary_identity" in rep.failures()


def test_ellipse_clearance():
    assert CellGeometry(2, ellipse(2, (0.3, 0.2)), clearance=0.2).check_clearance()
    assert not CellGeometry(2, ellipse(2, (0.45, 0.2)), clearance=0.2).check_clearance()


def test_movement_bounds_uniform_and_exact_scaling():
    smap = make_map("radial-growth", 2)
    ls = circle(2, 0.25)
    rows, uniform = verify_movement_bounds(smap, EPS, level_set=ls, t_max=0.25)
    assert all(uniform.values()), rows
    # v and W carry exactly one factor eps: eps^-1 |.| is the same number for every eps
    for col in ("v_over_eps", "W_over_eps"):
        vals = np.array([r[col] for r in rows])
        assert vals.min() > 0
        assert np.ptp(vals) <= 1e-6 * vals.max()
    rows_t, uniform_t = verify_movement_bounds(smap, EPS, level_set=ls, t_max=0.25, time_derivative=True)
    assert all(uniform_t.values()), rows_t


def test_movement_columns_identity():
    row = movement_sup_norms(identity_map(2), 0.25, [0.0, 0.5], circle(2, 0.25))
    assert set(row) == set(MOVEMENT_COLUMNS)
    assert row["F"] == 1.0 and row["J"] == 1.0
    assert row["v_over_eps"] == 0.0 and row["W_over_eps"] == 0.0
    # eps * H is eps times the curvature of the circle, scaled back to the cell
    assert row["eps_H"] == pytest.approx(4.0, rel=1e-10)


def test_movement_bounds_reject_bad_eps():
    with pytest.raises(ValueError):
        verify_movement_bounds(identity_map(2), [0.25, -0.1])


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_radial_growth_is_identity_near_cell_boundary(t, x0, x1):
    smap = make_map("radial-growth", 2)
    y = np.array([[0.02, 0.5], [0.5, 0.98], [0.01, 0.01]])
    x = np.broadcast_to([x0, x1], y.shape)
    np.testing.assert_allclose(smap.s(t, x, y), y, atol=1e-14)
