"""Convergence studies and the property suite.

A study solves the two-scale model once, then runs the eps-problem for
every eps of the config while streaming each time level into an
:class:`~thermohom.corrector.ErrorAccumulator`.  Results go to
``errors.csv`` (one row per eps), ``summary.json`` (resolved config, rates
and checks) and optionally ``rates.svg``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import multiprocessing as mp
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cell_problems import CellCoefficients, CellProblemSolver, parameter_range
from .config import ConfigError, StudyConfig
from .corrector import (NORM_COLUMNS, ErrorAccumulator, Reconstructor, bubble_probes, cell_mean,
                        cutoff_estimate, cutoff_function, transformation_approx_test,
                        zero_mean_operator_test)
from .eps_solver import solve_eps
from .fem import SolverError
from .geometry import check_admissibility, verify_movement_bounds
from .material import PROVEN_MODES
from .mesh import generate_macro_mesh
from .twoscale import solve_twoscale

log = logging.getLogger(__name__)

CSV_COLUMNS = ("eps",) + NORM_COLUMNS + ("total",)
UNPROVEN = "unproven by paper"


class StudyError(RuntimeError):
    """A solver failed during a study; ``stage`` and ``eps`` say where."""

    def __init__(self, msg, stage, eps=None):
        super().__init__(msg)
        self.stage = stage
        self.eps = eps


# --------------------------------------------------------------------------
# rate fitting
# --------------------------------------------------------------------------
@dataclass
class RateFit:
    """Least-squares line through ``(log eps, log error)``.

    ``skipped`` is set when fewer than two positive errors are available;
    slope and intercept are then ``None``.
    """

    slope: float | None
    intercept: float | None
    residual: float | None
    n_points: int
    skipped: bool = False

    @classmethod
    def fit(cls, eps, errors) -> "RateFit":
        e = np.asarray(eps, float)
        v = np.asarray(errors, float)
        if len(e) != len(v):
            raise ValueError("eps and errors differ in length")
        if len(e) < 2 or np.any(v <= 0) or not np.all(np.isfinite(v)):
            return cls(None, None, None, len(e), skipped=True)
        lx, ly = np.log(e), np.log(v)
        if len(e) == 2:
            slope = (ly[1] - ly[0]) / (lx[1] - lx[0])
            return cls(float(slope), float(ly[0] - slope * lx[0]), 0.0, 2)
        A = np.column_stack([lx, np.ones_like(lx)])
        (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
        res = float(np.linalg.norm(A @ np.array([slope, icpt]) - ly))
        return cls(float(slope), float(icpt), res, len(e))


def pairwise_rates(eps, errors):
    """Slopes between consecutive eps values (``None`` where an error vanishes)."""
    return [RateFit.fit(eps[i:i + 2], errors[i:i + 2]).slope for i in range(len(eps) - 1)]


# --------------------------------------------------------------------------
# study
# --------------------------------------------------------------------------
@dataclass
class StudyResult:
    config: StudyConfig
    reports: list
    fits: dict
    pairwise: dict
    checks: dict
    asserted: bool
    timings: dict = field(default_factory=dict)
    twoscale_info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values() if c["asserted"])

    @property
    def status(self) -> str:
        return "asserted" if self.asserted else UNPROVEN

    def csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# artifact {__version__}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.reports:
            w.writerow([repr(float(v)) for v in r.row()])
        return buf.getvalue()

    def summary(self) -> dict:
        return dict(
            version=__version__,
            config=self.config.resolved(),
            coupling_mode=self.config.coupling_mode,
            rate_status=self.status,
            reports=[r.as_dict() for r in self.reports],
            rates={k: asdict(v) for k, v in self.fits.items()},
            pairwise_rates=self.pairwise,
            checks=self.checks,
            passed=self.passed,
            twoscale=self.twoscale_info,
            timings=self.timings,
        )

    def write(self, out):
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "errors.csv").write_text(self.csv_text())
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        if self.config.svg:
            write_rates_svg(self, out / "rates.svg")
        return out


def write_rates_svg(result: StudyResult, path):
    """Log-log plot of every norm against eps; skipped without matplotlib."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.info("matplotlib not installed; rates.svg skipped")
        return None
    eps = [r.eps for r in result.reports]
    matplotlib.rcParams["svg.hashsalt"] = "thermohom"
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for name in NORM_COLUMNS + ("total",):
        vals = [getattr(r, name) for r in result.reports]
        if all(v > 0 for v in vals):
            ax.loglog(eps, vals, "o-", label=name, lw=2 if name == "total" else 1)
    ax.set_xlabel("eps")
    ax.set_ylabel("error")
    ax.legend(fontsize=7)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


_SHARED = {}


def _eps_run(eps):
    """Error report for one eps against the shared two-scale trajectory."""
    problem, ts = _SHARED["problem"], _SHARED["twoscale"]
    cell_mesh, tol = _SHARED["cell_mesh"], _SHARED["tol"]
    t0 = time.perf_counter()
    try:
        mesh = generate_macro_mesh(problem.omega, eps, cell_mesh)
        rec = Reconstructor(mesh, ts.mesh, ts.coarse, ts.template, ts.cells, eps)
        acc = ErrorAccumulator(rec, problem.dt if problem.n_steps else 1.0)

        def observe(n, t, U, Theta):
            acc.update(n, ts.states[n], U, Theta)

        solve_eps(problem, mesh, eps, observer=observe, store=False, tol=tol)
    except (SolverError, ValueError) as exc:
        raise StudyError(f"eps={eps}: {exc}", "eps_solver", eps) from exc
    return acc.report(), time.perf_counter() - t0


def _map_runs(eps_list, jobs):
    if jobs <= 1 or len(eps_list) == 1:
        return [_eps_run(e) for e in eps_list]
    # fork so the stored two-scale trajectory is shared, not pickled
    ctx = mp.get_context("fork")
    with ctx.Pool(min(jobs, len(eps_list))) as pool:
        return pool.map(_eps_run, eps_list, chunksize=1)


def run_study(config: StudyConfig, unproven: bool = False, jobs: int | None = None, out=None) -> StudyResult:
    """Full convergence study; writes artifacts to ``out`` when given."""
    mode = config.coupling_mode
    if mode not in PROVEN_MODES and not unproven:
        raise ConfigError(f"coupling mode {mode!r} has no proven rate; rerun with --unproven")
    asserted = mode in PROVEN_MODES
    jobs = config.integer("study.jobs") if jobs is None else int(jobs)
    problem = config.problem()
    t0 = time.perf_counter()
    cell_mesh = config.cell_mesh()
    try:
        ts = solve_twoscale(problem, cell_mesh, n_macro=config.integer("mesh.n_macro"),
                            micro_stride=config.integer("mesh.micro_stride"),
                            coupling=config.get("twoscale.coupling"), sweeps=config.integer("twoscale.sweeps"),
                            tol=config.num("solver.tol"))
    except (SolverError, ValueError) as exc:
        raise StudyError(f"two-scale solve failed: {exc}", "twoscale") from exc
    timings = {"twoscale": time.perf_counter() - t0}
    log.info("two-scale solve done in %.1f s", timings["twoscale"])
    _SHARED.update(problem=problem, twoscale=ts, cell_mesh=cell_mesh, tol=config.num("solver.tol"))
    try:
        runs = _map_runs(config.eps_list, jobs)
    finally:
        _SHARED.clear()
    reports = [r for r, _ in runs]
    for r, dt in runs:
        timings[f"eps={r.eps!r}"] = dt
        log.info("eps=%g total=%.4g (%.1f s)", r.eps, r.total, dt)
    eps = [r.eps for r in reports]
    fits, pairwise = {}, {}
    for name in NORM_COLUMNS + ("total",):
        vals = [getattr(r, name) for r in reports]
        fits[name] = RateFit.fit(eps, vals)
        pairwise[name] = pairwise_rates(eps, vals)
    checks = _study_checks(config, reports, fits["total"], asserted)
    info = dict(sweep_warnings=int(sum(1 for incs in ts.sweep_increments if incs and incs[-1] > 1e-6)),
                n_micro_points=int(ts.coarse.n_nodes))
    res = StudyResult(config, reports, fits, pairwise, checks, asserted, timings, info)
    if out is not None:
        res.write(out)
    return res


def _study_checks(config, reports, fit: RateFit, asserted):
    lo, hi = config.num("acceptance.slope_min"), config.num("acceptance.slope_max")
    factor = config.num("acceptance.uniform_factor")
    totals = [r.total for r in reports]
    checks = {}

    def add(name, passed, detail, strict=True):
        checks[name] = dict(passed=bool(passed), asserted=bool(asserted and strict), detail=detail)

    if fit.skipped:
        add("total_slope", True, "fit skipped (vanishing errors)", strict=False)
    else:
        add("total_slope", lo <= fit.slope <= hi, f"slope {fit.slope:.4f} in [{lo}, {hi}]")
    add("total_decreasing", fit.skipped or all(b < a for a, b in zip(totals, totals[1:])),
        "totals " + ", ".join(f"{v:.4g}" for v in totals), strict=not fit.skipped)
    energy = [r.energy for r in reports]
    ok = min(energy) > 0 and max(energy) / min(energy) <= factor if min(energy) > 0 else max(energy) == 0
    add("energy_uniform", ok, "energy " + ", ".join(f"{v:.4g}" for v in energy))
    add("boundary_trace_zero", all(r.boundary_trace == 0.0 for r in reports),
        "max |cor0| on the boundary " + ", ".join(f"{r.boundary_trace:.3g}" for r in reports))
    korn = [r.korn_ratio for r in reports if r.korn_ratio > 0]
    add("korn_ratio_stable", not korn or max(korn) / min(korn) <= factor,
        "ratio " + ", ".join(f"{v:.4g}" for v in korn))
    return checks


# --------------------------------------------------------------------------
# property suite
# --------------------------------------------------------------------------
@dataclass
class PropertyReport:
    entries: dict = field(default_factory=dict)

    def add(self, name, passed, detail=""):
        self.entries[name] = dict(passed=bool(passed), detail=str(detail))

    @property
    def passed(self):
        return all(e["passed"] for e in self.entries.values())

    def lines(self):
        return [f"{'PASS' if e['passed'] else 'FAIL'} {k}: {e['detail']}" for k, e in self.entries.items()]


def _slope_ok(slope, bound):
    return bool(np.isinf(slope) or slope >= bound)


def zero_mean_probe_field(cell_mesh):
    """``sin(2 pi y0)`` shifted by its discrete Y_A mean."""
    base = lambda x, y: np.sin(2 * np.pi * y[..., 0])  # noqa: E731
    vol = cell_mesh.base.phase_volume("A")
    shift = cell_mean(base, cell_mesh) / vol

    def f(x, y):
        return base(x, y) - shift

    return f


def run_property_suite(config: StudyConfig) -> PropertyReport:
    """Admissibility, movement bounds, both lemma tests, cut-off bound and cell invariants."""
    rep = PropertyReport()
    geo = config.geometry()
    smap = config.deformation_map()
    eps = config.eps_list
    omega = config.omega
    T = config.num("study.T")
    factor = config.num("acceptance.uniform_factor")
    bound = config.num("acceptance.lemma_slope")
    ls = None if geo.inclusion.empty else geo.inclusion

    adm = check_admissibility(smap, geo, t_max=max(T, 1e-12), omega=omega)
    rep.add("admissibility", adm.passed, "; ".join(adm.failures()) or "all assumptions hold")
    for deriv in (False, True):
        rows, uniform = verify_movement_bounds(smap, eps, level_set=ls, t_max=max(T, 2e-4), factor=factor,
                                               omega=omega, time_derivative=deriv)
        bad = [k for k, v in uniform.items() if not v]
        rep.add("movement_bounds" + ("_dt" if deriv else ""), not bad, ", ".join(bad) or f"factor <= {factor}")
    _, slopes = transformation_approx_test(smap, eps, ls, t_max=max(T, 3e-4), omega=omega)
    bad = {k: s for k, s in slopes.items() if not _slope_ok(s, bound)}
    rep.add("transformation_lemma", not bad,
            ", ".join(f"{k}={s:.3f}" for k, s in (bad or slopes).items()))
    cell_mesh = config.cell_mesh()
    if cell_mesh.base.phase_volume("A") > 0:
        f = zero_mean_probe_field(cell_mesh)
        vals, slope = zero_mean_operator_test(f, eps, cell_mesh, bubble_probes(20, config.dim, omega, seed=config.seed), omega)
        rep.add("zero_mean_lemma", _slope_ok(slope, bound), f"slope {slope:.3f}")
    cuts = []
    for e in eps:
        mesh = generate_macro_mesh(omega, e, cell_mesh)
        cuts.append(cutoff_estimate(mesh, cutoff_function(mesh, e, omega=omega))["total"])
    rep.add("cutoff_bound", max(cuts) / min(cuts) <= factor, "totals " + ", ".join(f"{c:.4g}" for c in cuts))
    _cell_invariants(rep, config, cell_mesh, smap, T, omega)
    return rep


def _cell_invariants(rep, config, cell_mesh, smap, T, omega):
    """Symmetry and positivity of the effective tensors at a few (t, x)."""
    mat = config.material()
    pr = parameter_range(smap, max(T, 1e-12), omega)
    cells = CellCoefficients(cell_mesh, mat, smap, config.geometry().inclusion, p_range=pr,
                             solver=CellProblemSolver(cell_mesh))
    lo = np.array([o[0] for o in omega])
    hi = np.array([o[1] for o in omega])
    xs = lo + np.array([[0.5] * config.dim, [0.25] * config.dim, [0.8] * config.dim]) * (hi - lo)
    worst_sym, min_eig = 0.0, np.inf
    for t in (0.0, T):
        co = cells.coefficients(t, xs)
        for C, K, c in zip(co["C_h"], co["K_h"], co["c_h"]):
            d = K.shape[0]
            for perm in ((1, 0, 2, 3), (0, 1, 3, 2), (2, 3, 0, 1)):
                worst_sym = max(worst_sym, float(np.max(np.abs(C - C.transpose(perm)))))
            worst_sym = max(worst_sym, float(np.max(np.abs(K - K.T))))
            Cv = np.array([[C[i, j, k, l] for k in range(d) for l in range(d)]
                           for i in range(d) for j in range(d)])
            ev = np.linalg.eigvalsh(0.5 * (Cv + Cv.T))
            min_eig = min(min_eig, float(np.linalg.eigvalsh(K).min()), float(np.sort(ev)[-d * (d + 1) // 2]),
                          float(c))
    rep.add("effective_symmetry", worst_sym <= 1e-8, f"max asymmetry {worst_sym:.2e}")
    rep.add("effective_positivity", min_eig > 0, f"min eigenvalue {min_eig:.4g}")
