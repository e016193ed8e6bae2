"""``study`` command line: run, verify, mesh-preview."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, StudyConfig
from .mesh import MeshError, generate_macro_mesh, write_vtk
from .study import UNPROVEN, StudyError, run_property_suite, run_study


def _load(path):
    try:
        return StudyConfig.from_file(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def cmd_run(args):
    cfg = _load(args.config)
    out = Path(args.out or cfg.get("study.out"))
    res = run_study(cfg, unproven=args.unproven, jobs=args.jobs, out=out)
    print(res.csv_text(), end="")
    fit = res.fits["total"]
    if res.asserted:
        slope = "skipped" if fit.skipped else f"{fit.slope:.4f}"
        print(f"total slope: {slope}")
        for name, c in res.checks.items():
            if c["asserted"]:
                print(f"{'PASS' if c['passed'] else 'FAIL'} {name}: {c['detail']}")
    else:
        slope = "n/a" if fit.skipped else f"{fit.slope:.4f}"
        print(f"total slope: {slope} ({UNPROVEN}; nothing asserted)")
    print(f"artifacts written to {out}")
    return 0 if res.passed else 1


def cmd_verify(args):
    rep = run_property_suite(_load(args.config))
    for line in rep.lines():
        print(line)
    return 0 if rep.passed else 1


def cmd_mesh_preview(args):
    cfg = _load(args.config)
    out = Path(args.out or cfg.get("study.out"))
    out.mkdir(parents=True, exist_ok=True)
    cm = cfg.cell_mesh()
    base = cm.base
    write_vtk(base, out / "cell.vtk")
    print(f"cell mesh: {base.n_nodes} nodes, {base.n_cells} cells, h={base.h:.4g}, "
          f"|Y_A|={base.phase_volume('A'):.6f}, |Y_B|={base.phase_volume('B'):.6f}")
    for eps in cfg.eps_list:
        m = generate_macro_mesh(cfg.omega, eps, cm)
        name = f"macro_eps_{round(1 / eps)}.vtk" if abs(1 / eps - round(1 / eps)) < 1e-9 else f"macro_eps_{eps:g}.vtk"
        write_vtk(m, out / name)
        print(f"eps={eps:g}: {m.n_nodes} nodes, {m.n_cells} cells -> {out / name}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="study", description="Homogenization corrector convergence studies.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a convergence study")
    r.add_argument("config")
    r.add_argument("--unproven", action="store_true", help="allow the 'full' coupling mode (nothing asserted)")
    r.add_argument("--jobs", type=int, default=None, help="parallel eps runs")
    r.add_argument("--out", default=None, help="output directory")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("verify", help="run the property suite")
    v.add_argument("config")
    v.set_defaults(func=cmd_verify)
    m = sub.add_parser("mesh-preview", help="write cell and macro meshes as VTK")
    m.add_argument("config")
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_mesh_preview)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StudyError as exc:
        print(f"error during {exc.stage}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
