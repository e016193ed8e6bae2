import numpy as np
import pytest

from thermohom.config import DEFAULTS, ConfigError, StudyConfig, parse_text


def test_defaults_resolve_and_validate():
    cfg = StudyConfig.from_text("")
    assert cfg.eps_list == [0.25, 0.125, 0.0625]
    assert cfg.coupling_mode == "no_dissipation"
    assert cfg.omega == [(0.0, 1.0), (0.0, 1.0)]
    assert set(cfg.resolved()) == set(DEFAULTS)


def test_round_trip_through_text():
    cfg = StudyConfig.from_text("study.eps = 1/2, 1/4\nmaterial.k = 1, 3  # phase B is a better conductor\n")
    again = StudyConfig.from_text(cfg.to_text())
    assert again.resolved() == cfg.resolved()
    assert again.material().K_B[0, 0] == 3.0


def test_overrides_take_precedence():
    cfg = StudyConfig.from_text("study.steps = 8", **{"study.steps": "4"})
    assert cfg.integer("study.steps") == 4


@pytest.mark.parametrize("text, match", [
    ("study.bogus = 1", "unknown key"),
    ("study.eps = 1/4\nstudy.eps = 1/8", "duplicate"),
    ("no equals sign", "expected"),
    ("study.eps = 1/8, 1/4", "decreasing"),
    ("study.eps = 0.3", "divide"),
    ("material.coupling_mode = weak", "coupling_mode"),
    ("mesh.micro_stride = 3", "divide"),
    ("geometry.inclusion = square", "inclusion"),
    ("mesh.cell_h = abc", "not a number"),
    ("material.k = 1", "phase A, phase B"),
    ("output.svg = maybe", "boolean"),
    ("data.f_theta_A = sin(", "data.f_theta_A"),
])
def test_invalid_configs_are_rejected(text, match):
    with pytest.raises(ConfigError, match=match):
        StudyConfig.from_text(text).validate()


def test_parse_ignores_comments_and_blank_lines():
    assert parse_text("# header\n\n  study.T = 0.5   # trailing\n") == {"study.T": "0.5"}


def test_builders_produce_consistent_objects():
    cfg = StudyConfig.from_text("study.eps = 1/2\nmesh.cell_h = 1/8")
    pb = cfg.problem()
    assert pb.T == 0.25 and pb.n_steps == 64
    x = np.array([[0.5, 0.5]])
    assert pb.data.theta0_A(x) == pytest.approx(1.0)
    assert np.allclose(pb.data.f_u_A(0.0, x, x), [[1.0, 0.0]])
    assert cfg.cell_mesh().base.phase_volume("B") == pytest.approx(np.pi / 16, rel=5e-2)


def test_identity_and_expression_maps():
    assert StudyConfig.from_text("map.preset = identity").deformation_map().reduction is not None
    cfg = StudyConfig.from_text("map.preset = expression\nmap.components = y0; y1")
    y = np.array([[0.3, 0.7]])
    np.testing.assert_allclose(cfg.deformation_map().s(0.5, y, y), y)


def test_from_file(tmp_path):
    p = tmp_path / "s.cfg"
    p.write_text("study.name = smoke\n")
    assert StudyConfig.from_file(p).get("study.name") == "smoke"
