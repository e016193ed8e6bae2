import pytest

from thermohom.cli import main

SMALL = """
study.eps = 1/2, 1/4
study.steps = 2
study.T = 0.02
mesh.cell_h = 1/8
mesh.n_macro = 16
mesh.micro_stride = 2
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def _strip_version(text):
    lines = text.splitlines()
    assert lines[0].startswith("# artifact ")
    return lines[1:]


def test_run_is_deterministic(tmp_path, small_cfg, capsys):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["run", str(small_cfg), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "PASS boundary_trace_zero" in printed and "total slope:" in printed
    a, b = ((o / "errors.csv").read_text() for o in outs)
    assert _strip_version(a) == _strip_version(b)
    if (outs[0] / "rates.svg").exists():
        assert (outs[0] / "rates.svg").read_bytes() == (outs[1] / "rates.svg").read_bytes()


def test_full_mode_is_refused_without_flag(tmp_path, small_cfg, capsys):
    small_cfg.write_text(SMALL + "material.coupling_mode = full\n")
    assert main(["run", str(small_cfg), "--out", str(tmp_path / "o")]) == 2
    assert "--unproven" in capsys.readouterr().err
    assert main(["run", str(small_cfg), "--unproven", "--out", str(tmp_path / "o")]) == 0
    assert "unproven by paper" in capsys.readouterr().out


def test_bad_config_exits_with_usage_error(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("study.nope = 1\n")
    assert main(["run", str(p)]) == 2
    assert "unknown key" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2


def test_mesh_preview(tmp_path, small_cfg, capsys):
    out = tmp_path / "m"
    assert main(["mesh-preview", str(small_cfg), "--out", str(out)]) == 0
    assert (out / "cell.vtk").exists() and (out / "macro_eps_2.vtk").exists() and (out / "macro_eps_4.vtk").exists()
    assert "|Y_B|=" in capsys.readouterr().out


def test_verify_prints_one_line_per_property(tmp_path, capsys):
    p = tmp_path / "v.cfg"
    p.write_text("mesh.cell_h = 1/16\n")
    assert main(["verify", str(p)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith(("PASS ", "FAIL ")) for line in lines)
