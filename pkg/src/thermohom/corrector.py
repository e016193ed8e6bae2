"""Macroscopic reconstruction, correctors and the error report.

All comparisons happen on the eps-mesh.  A two-scale field is evaluated at
``(x, {x/eps})`` node by node: the macro argument by P1 interpolation from
the two-scale solver's meshes and the cell argument through the template
node each eps-mesh vertex carries, so no interpolation in ``y`` is needed.

Error fields are phase-wise nodal arrays: ``*_A`` is used on A-cells and
``*_B`` on B-cells, which keeps the interface values of both sides.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import fem
from .cell_problems import CellCoefficients
from .geometry import (_FD_STEP_T, DeformationMap, LevelSet, _matched_points, eval_transformation,
                       unfold)
from .mesh import PHASE_A, PHASE_B, PeriodicCellMesh, TaggedMesh

NORM_COLUMNS = ("theta_linf", "u_linf_l2", "grad_theta_cor_A", "grad_u_cor_A", "eps_grad_theta_B",
                "eps_grad_u_cor_B")


# --------------------------------------------------------------------------
# P1 helpers on the eps-mesh
# --------------------------------------------------------------------------
def cell_grad(mesh: TaggedMesh, nodal, cells=None):
    """Elementwise P1 gradient; scalar ``(n,)`` -> ``(e, d)``, vector ``(n, c)`` -> ``(e, c, d)``."""
    sel = slice(None) if cells is None else cells
    G = mesh.gradients[sel]
    v = np.asarray(nodal)[mesh.cells[sel]]
    if v.ndim == 2:
        return np.einsum("ea,eak->ek", v, G)
    return np.einsum("eac,eak->eck", v, G)


def l2_sq(mesh: TaggedMesh, nodal, cells):
    """Exact ``int |u|^2`` of a P1 field over the given cells."""
    v = np.asarray(nodal)[mesh.cells[cells]]
    k = mesh.dim + 1
    if v.ndim == 3:
        s2 = np.sum(v ** 2, axis=(1, 2))
        s1 = np.sum(np.sum(v, axis=1) ** 2, axis=1)
    else:
        s2 = np.sum(v ** 2, axis=1)
        s1 = np.sum(v, axis=1) ** 2
    return float(np.sum(mesh.volumes[cells] * (s2 + s1)) / (k * (k + 1)))


def const_sq(mesh: TaggedMesh, cellwise, cells):
    """``int |g|^2`` of an elementwise-constant field given on ``cells``."""
    g = np.asarray(cellwise)
    if g.size == 0:
        return 0.0
    return float(np.sum(mesh.volumes[cells] * np.sum(g.reshape(len(g), -1) ** 2, axis=1)))


def nodal_average(mesh: TaggedMesh, cellwise):
    """Volume-weighted average of cell values at the nodes."""
    k = mesh.dim + 1
    vals = np.asarray(cellwise).reshape(mesh.n_cells, -1)
    w = np.repeat(mesh.volumes, k)
    idx = mesh.cells.ravel()
    den = np.bincount(idx, weights=w, minlength=mesh.n_nodes)
    out = np.stack([np.bincount(idx, weights=w * np.repeat(vals[:, c], k), minlength=mesh.n_nodes)
                    for c in range(vals.shape[1])], axis=1) / den[:, None]
    return out.reshape((mesh.n_nodes,) + np.shape(cellwise)[1:])


def phase_nodes(mesh: TaggedMesh, tag):
    mask = np.zeros(mesh.n_nodes, bool)
    mask[mesh.cells[mesh.cell_tag == tag].ravel()] = True
    return mask


# --------------------------------------------------------------------------
# cut-off
# --------------------------------------------------------------------------
@dataclass
class CutoffFunction:
    eps: float
    c: float
    values: np.ndarray
    distance: np.ndarray


def box_distance(points, omega):
    lo = np.array([o[0] for o in omega])
    hi = np.array([o[1] for o in omega])
    return np.min(np.minimum(points - lo, hi - points), axis=1)


def cutoff_function(mesh: TaggedMesh, eps: float, c: float = 1.0, omega=None) -> CutoffFunction:
    """Clamped ramp in the distance to the boundary, smoothed by one nodal-averaging pass.

    The plateaus ``m = 0`` (distance <= eps*c/2) and ``m = 1`` (distance >=
    eps*c) are re-imposed after smoothing.
    """
    omega = omega or [(float(mesh.vertices[:, i].min()), float(mesh.vertices[:, i].max()))
                      for i in range(mesh.dim)]
    dist = box_distance(mesh.vertices, omega)
    band = eps * c
    m = np.clip(2.0 * dist / band - 1.0, 0.0, 1.0)
    m = nodal_average(mesh, m[mesh.cells].mean(axis=1))
    m[dist <= 0.5 * band] = 0.0
    m[dist >= band] = 1.0
    return CutoffFunction(float(eps), float(c), m, dist)


def discrete_laplacian(mesh: TaggedMesh, values):
    """``-M_L^{-1} A u`` at interior nodes (zero on the boundary)."""
    A = fem.assemble_diffusion(mesh, np.eye(mesh.dim))
    ml = np.bincount(mesh.cells.ravel(), weights=np.repeat(mesh.volumes / (mesh.dim + 1), mesh.dim + 1),
                     minlength=mesh.n_nodes)
    lap = -(A @ values) / ml
    lap[mesh.boundary_nodes] = 0.0
    return lap, ml


def cutoff_estimate(mesh: TaggedMesh, cut: CutoffFunction):
    """Terms of the cut-off bound ``sqrt(eps)|grad m| + eps^1.5 |lap m| + |1-m|/sqrt(eps)``."""
    eps = cut.eps
    all_cells = np.arange(mesh.n_cells)
    grad = np.sqrt(const_sq(mesh, cell_grad(mesh, cut.values), all_cells))
    lap, ml = discrete_laplacian(mesh, cut.values)
    lap_n = float(np.sqrt(np.sum(ml * lap ** 2)))
    rest = np.sqrt(l2_sq(mesh, 1.0 - cut.values, all_cells))
    terms = dict(grad=np.sqrt(eps) * grad, laplacian=eps ** 1.5 * lap_n, one_minus=rest / np.sqrt(eps))
    terms["total"] = sum(terms.values())
    return terms


# --------------------------------------------------------------------------
# reconstruction
# --------------------------------------------------------------------------
def reconstruct(f, eps: float, mesh: TaggedMesh):
    """Nodal values ``f(x, {x/eps})`` of a callable two-scale field.

    Meshes from :func:`generate_macro_mesh` supply the exact template
    coordinate of every node; other meshes are unfolded numerically.
    """
    if mesh.eps is not None and not np.isclose(mesh.eps, eps, rtol=1e-12):
        raise ValueError(f"mesh was built for eps={mesh.eps}, not {eps}")
    x = mesh.vertices
    if mesh.node_template is not None:
        y = mesh.template.base.vertices[mesh.node_template]
    else:
        _, y = unfold(x, eps)
    return np.asarray(f(x, y), dtype=float)


class Reconstructor:
    """Evaluates the two-scale solution and the cell correctors at eps-mesh nodes."""

    def __init__(self, mesh: TaggedMesh, macro_mesh: TaggedMesh, coarse: TaggedMesh, template,
                 cells: CellCoefficients, eps: float):
        if mesh.node_template is None:
            raise ValueError("eps-mesh must come from generate_macro_mesh")
        if not np.isclose(mesh.eps, eps, rtol=1e-12):
            raise ValueError(f"mesh was built for eps={mesh.eps}, not {eps}")
        self.mesh = mesh
        self.eps = float(eps)
        self.macro_mesh = macro_mesh
        self.coarse = coarse
        self._coarse_all = None
        self.template = template
        self.cells = cells
        self.Wx = fem.interpolation_matrix(macro_mesh, mesh.vertices)
        self.nodes_A = phase_nodes(mesh, PHASE_A)
        self.nodes_B = phase_nodes(mesh, PHASE_B)
        self.bnodes = np.nonzero(self.nodes_B)[0]
        self.cells_A = np.nonzero(mesh.cell_tag == PHASE_A)[0]
        self.cells_B = np.nonzero(mesh.cell_tag == PHASE_B)[0]
        self.tnode = mesh.node_template
        if len(self.bnodes):
            Wc = fem.interpolation_matrix(coarse, mesh.vertices[self.bnodes]).tocsr()
            k = mesh.dim + 1
            cols = np.zeros((len(self.bnodes), k), dtype=np.int64)
            wts = np.zeros((len(self.bnodes), k))
            for i in range(len(self.bnodes)):
                a, b = Wc.indptr[i], Wc.indptr[i + 1]
                cols[i, : b - a] = Wc.indices[a:b]
                wts[i, : b - a] = Wc.data[a:b]
            self.coarse_cols, self.coarse_w = cols, wts
        # cell correctors gathered at the eps-nodes (per Chebyshev node for reduced maps)
        if cells.reduced:
            p = self.tnode
            self.tau_theta = cells.tau_theta[:, :, p]          # (q, d, n)
            self.tau_u = cells.tau_u[:, :, :, p, :]            # (q, d, d, n, d)
            self.tau_alpha = cells.tau_alpha[:, p, :]          # (q, n, d)

    # -- macro fields --------------------------------------------------------
    def macro(self, u_A, theta_A):
        """``u_A``, ``theta_A`` and the recovered ``e(u_A)``, ``grad theta_A`` at eps-nodes."""
        mm = self.macro_mesh
        gu = nodal_average(mm, cell_grad(mm, u_A))            # (N, d, d)
        gt = nodal_average(mm, cell_grad(mm, theta_A))        # (N, d)
        e = 0.5 * (gu + np.swapaxes(gu, 1, 2))
        d = mm.dim
        W = self.Wx
        return (W @ u_A, W @ theta_A, (W @ e.reshape(len(e), -1)).reshape(-1, d, d), W @ gt)

    def micro(self, state):
        """``[U_B]_eps`` and ``[Theta_B]_eps`` on B-nodes (zero elsewhere)."""
        d = self.mesh.dim
        U = np.zeros((self.mesh.n_nodes, d))
        Th = np.zeros(self.mesh.n_nodes)
        if len(self.bnodes) == 0:
            return U, Th
        full = self.template.full_field(state.micro, state.trace)   # (n_points, N_t, nc)
        vals = np.einsum("nk,nkc->nc", self.coarse_w,
                         full[self.coarse_cols, self.tnode[self.bnodes][:, None]])
        U[self.bnodes] = vals[:, :d]
        Th[self.bnodes] = vals[:, d]
        return U, Th

    def correctors(self, t, e_uA, theta_A, grad_theta_A):
        """``U_tilde`` and ``Theta_tilde`` at the eps-nodes."""
        cells = self.cells
        x = self.mesh.vertices
        if cells.reduced:
            w = cells.weights(t, x)
            Ut = (np.einsum("nq,qjknc,njk->nc", w, self.tau_u, e_uA, optimize=True)
                  + np.einsum("nq,qnc,n->nc", w, self.tau_alpha, theta_A, optimize=True))
            Tt = np.einsum("nq,qjn,nj->n", w, self.tau_theta, grad_theta_A, optimize=True)
            return Ut, Tt
        # general maps: solve at the coarse micro points and interpolate in x
        if self._coarse_all is None:
            self._coarse_all = fem.interpolation_matrix(self.coarse, x).tocsr()
        W = self._coarse_all
        p = self.tnode
        sols = [cells.solution(t, xc) for xc in self.coarse.vertices]
        tu = np.stack([s.tau_u[:, :, p] for s in sols])         # (c, d, d, n, d)
        ta = np.stack([s.tau_alpha[p] for s in sols])           # (c, n, d)
        tt = np.stack([s.tau_theta[:, p] for s in sols])        # (c, d, n)
        Ut = np.empty((len(x), x.shape[1]))
        Tt = np.empty(len(x))
        for i in range(len(x)):
            a, b = W.indptr[i], W.indptr[i + 1]
            cols, wts = W.indices[a:b], W.data[a:b]
            Ut[i] = (np.einsum("c,cjkd,jk->d", wts, tu[cols, :, :, i], e_uA[i])
                     + wts @ ta[cols, i] * theta_A[i])
            Tt[i] = np.einsum("c,cj,j->", wts, tt[cols, :, i], grad_theta_A[i])
        return Ut, Tt


# --------------------------------------------------------------------------
# correctors and error fields
# --------------------------------------------------------------------------
@dataclass
class CorrectorFields:
    """Phase-wise nodal error, corrector and modified corrector fields at one time."""

    U_err_A: np.ndarray
    U_err_B: np.ndarray
    Theta_err_A: np.ndarray
    Theta_err_B: np.ndarray
    U_tilde: np.ndarray
    Theta_tilde: np.ndarray
    U_cor_A: np.ndarray
    Theta_cor_A: np.ndarray
    U_cor0_A: np.ndarray
    U_cor0_B: np.ndarray
    Theta_cor0_A: np.ndarray
    Theta_cor0_B: np.ndarray


def build_correctors(rec: Reconstructor, state, U, Theta, cutoff: CutoffFunction) -> CorrectorFields:
    """Error, corrector and cut-off corrector fields of one eps-state against one two-scale state."""
    eps = rec.eps
    uA, tA, e, gt = rec.macro(state.u_A, state.theta_A)
    bnd = rec.mesh.boundary_nodes
    uA[bnd] = 0.0
    tA[bnd] = 0.0
    UB, TB = rec.micro(state)
    Ut, Tt = rec.correctors(state.t, e, tA, gt)
    m = cutoff.values
    U_err_A, T_err_A = U - uA, Theta - tA
    U_err_B, T_err_B = U - UB, Theta - TB
    U_cor_A = U_err_A - eps * Ut
    T_cor_A = T_err_A - eps * Tt
    return CorrectorFields(
        U_err_A, U_err_B, T_err_A, T_err_B, Ut, Tt, U_cor_A, T_cor_A,
        U_cor_A + (1.0 - m)[:, None] * eps * Ut, U_err_B - eps * Ut,
        T_cor_A + (1.0 - m) * eps * Tt, T_err_B - eps * Tt)


@dataclass
class ErrorReport:
    eps: float
    theta_linf: float
    u_linf_l2: float
    grad_theta_cor_A: float
    grad_u_cor_A: float
    eps_grad_theta_B: float
    eps_grad_u_cor_B: float
    energy: float = 0.0
    korn_ratio: float = 0.0
    boundary_trace: float = 0.0

    @property
    def norms(self):
        return [getattr(self, k) for k in NORM_COLUMNS]

    @property
    def total(self):
        return float(sum(self.norms))

    def row(self):
        return [self.eps] + self.norms + [self.total]

    def as_dict(self):
        out = asdict(self)
        out["total"] = self.total
        return out


class ErrorAccumulator:
    """Streams eps-states and matching two-scale states into an :class:`ErrorReport`.

    Sup-in-time norms take the maximum over all time levels including
    ``t = 0``; L2-in-time norms use the right-endpoint rule over steps
    ``1..N``, matching implicit Euler.
    """

    def __init__(self, rec: Reconstructor, dt: float, cutoff: CutoffFunction | None = None):
        self.rec = rec
        self.dt = float(dt)
        self.cutoff = cutoff or cutoff_function(rec.mesh, rec.eps)
        self.sup = dict(theta_linf=0.0, u_linf_l2=0.0, grad_u_cor_A=0.0, eps_grad_u_cor_B=0.0,
                        energy_u=0.0, korn_num=0.0, korn_den=0.0, trace=0.0)
        self.sums = dict(grad_theta_cor_A=0.0, eps_grad_theta_B=0.0, energy_theta=0.0,
                         energy_grad_A=0.0, energy_grad_B=0.0)
        self.steps = 0

    def update(self, n, state, U, Theta):
        rec = self.rec
        mesh, eps = rec.mesh, rec.eps
        if not np.isclose(state.t, n * self.dt, rtol=1e-9, atol=1e-12):
            raise ValueError(f"time grids differ at step {n}: two-scale t={state.t}")
        cf = build_correctors(rec, state, U, Theta, self.cutoff)
        A, B = rec.cells_A, rec.cells_B
        nA, nB = rec.nodes_A, rec.nodes_B
        s = self.sup
        th = max(np.max(np.abs(cf.Theta_err_A[nA]), initial=0.0), np.max(np.abs(cf.Theta_err_B[nB]), initial=0.0))
        s["theta_linf"] = max(s["theta_linf"], float(th))
        s["u_linf_l2"] = max(s["u_linf_l2"], np.sqrt(l2_sq(mesh, cf.U_err_A, A) + l2_sq(mesh, cf.U_err_B, B)))
        gUA = cell_grad(mesh, cf.U_cor_A, A)
        s["grad_u_cor_A"] = max(s["grad_u_cor_A"], np.sqrt(const_sq(mesh, gUA, A)))
        gUB = cell_grad(mesh, cf.U_err_B, B)
        s["eps_grad_u_cor_B"] = max(s["eps_grad_u_cor_B"], eps * np.sqrt(const_sq(mesh, gUB, B)))
        s["energy_u"] = max(s["energy_u"], np.sqrt(l2_sq(mesh, U, np.arange(mesh.n_cells))))
        # Korn route: full gradient of U_cor against the strain of the cut-off corrector
        eA = _sym(cell_grad(mesh, cf.U_cor0_A, A))
        eB = _sym(cell_grad(mesh, cf.U_cor0_B, B))
        s["korn_num"] = max(s["korn_num"], np.sqrt(const_sq(mesh, gUA, A)))
        s["korn_den"] = max(s["korn_den"], np.sqrt(const_sq(mesh, eA, A)) + eps * np.sqrt(const_sq(mesh, eB, B)))
        bnd = mesh.boundary_nodes
        s["trace"] = max(s["trace"], float(np.max(np.abs(cf.Theta_cor0_A[bnd]), initial=0.0)),
                         float(np.max(np.abs(cf.U_cor0_A[bnd]), initial=0.0)))
        if n > 0:
            dt = self.dt
            m = self.sums
            m["grad_theta_cor_A"] += dt * const_sq(mesh, cell_grad(mesh, cf.Theta_cor_A, A), A)
            m["eps_grad_theta_B"] += dt * eps ** 2 * const_sq(mesh, cell_grad(mesh, cf.Theta_err_B, B), B)
            m["energy_theta"] += dt * l2_sq(mesh, Theta, np.arange(mesh.n_cells))
            gT = cell_grad(mesh, Theta)
            m["energy_grad_A"] += dt * const_sq(mesh, gT[A], A)
            m["energy_grad_B"] += dt * eps ** 2 * const_sq(mesh, gT[B], B)
        self.steps += 1
        return cf

    def report(self) -> ErrorReport:
        s, m = self.sup, self.sums
        energy = (np.sqrt(m["energy_theta"]) + s["energy_u"] + np.sqrt(m["energy_grad_A"])
                  + np.sqrt(m["energy_grad_B"]))
        korn = s["korn_num"] / s["korn_den"] if s["korn_den"] > 0 else 0.0
        return ErrorReport(self.rec.eps, float(s["theta_linf"]), float(s["u_linf_l2"]),
                           float(np.sqrt(m["grad_theta_cor_A"])), float(s["grad_u_cor_A"]),
                           float(np.sqrt(m["eps_grad_theta_B"])), float(s["eps_grad_u_cor_B"]),
                           energy=float(energy), korn_ratio=float(korn), boundary_trace=float(s["trace"]))


def _sym(g):
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def compute_error_report(eps_solution, twoscale_solution, eps: float, cutoff: CutoffFunction | None = None,
                         dt: float | None = None) -> ErrorReport:
    """Error report from two stored trajectories on the same time grid."""
    if len(eps_solution.times) != len(twoscale_solution.states):
        raise ValueError("eps and two-scale trajectories have different lengths")
    ts = twoscale_solution
    rec = Reconstructor(eps_solution.mesh, ts.mesh, ts.coarse, ts.template, ts.cells, eps)
    times = np.asarray(eps_solution.times)
    if dt is None:
        dt = float(times[1] - times[0]) if len(times) > 1 else 1.0
    acc = ErrorAccumulator(rec, dt, cutoff)
    for n, (t, U, Th, st) in enumerate(zip(times, eps_solution.U, eps_solution.Theta, ts.states)):
        if not np.isclose(t, st.t, rtol=1e-9, atol=1e-12):
            raise ValueError(f"time grids differ at index {n}: {t} vs {st.t}")
        acc.update(n, st, U, Th)
    return acc.report()


# --------------------------------------------------------------------------
# lemma checks
# --------------------------------------------------------------------------
def loglog_slope(eps_list, values):
    """Least-squares slope of ``log(values)`` against ``log(eps)`` (nan if any value is zero)."""
    e = np.log(np.asarray(eps_list, float))
    v = np.asarray(values, float)
    if np.any(v <= 0):
        return float("nan")
    return float(np.polyfit(e, np.log(v), 1)[0])


TRAFO_COLUMNS = ("F", "J", "v", "W", "H")
# sup-norms below this are round-off (e.g. time differences of a time-independent field)
ZERO_FLOOR = 1e-10


def _trafo_differences(smap, t, xb, xg, eps, level_set):
    """Sup-norms of the five field differences at one time."""
    fb = eval_transformation(smap, t, xb, eps, None)
    _, yb = unfold(xb, eps)
    rb = smap.cell_fields(t, xb, yb)
    out = dict(F=fb.F - rb.F, J=fb.J - rb.J, v=fb.v - eps * rb.v)
    if len(xg):
        fg = eval_transformation(smap, t, xg, eps, level_set)
        _, yg = unfold(xg, eps)
        rg = smap.cell_fields(t, xg, yg, level_set)
        out["W"] = fg.W_Gamma - eps * rg.W
        # H_Gamma^eps carries 1/eps; compare on the O(1) scale
        out["H"] = eps * fg.H_Gamma - rg.H
    else:
        out["W"] = out["H"] = np.zeros(1)
    return out


def transformation_approx_test(smap: DeformationMap, eps_list, level_set: LevelSet | None = None,
                               samples: int = 16, t_max: float = 1.0, n_times: int = 3, omega=None):
    """Sampled sup-norms of eps-fields minus reconstructions, and their log-log slopes.

    Returns ``(rows, slopes)``; each row maps ``"F"``, ``"J"``, ``"v"``, ``"W"``, ``"H"``
    and the same keys with suffix ``"_t"`` (time derivatives) to sup-norms.
    """
    omega = omega or [(0.0, 1.0)] * smap.dim
    t_values = np.linspace(_FD_STEP_T, t_max - _FD_STEP_T, n_times)
    rows = []
    for eps in eps_list:
        xb, xg = _matched_points(eps, samples, level_set, smap.dim, omega)
        row = {}
        for t in t_values:
            cur = _trafo_differences(smap, t, xb, xg, eps, level_set)
            hi = _trafo_differences(smap, t + _FD_STEP_T, xb, xg, eps, level_set)
            lo = _trafo_differences(smap, t - _FD_STEP_T, xb, xg, eps, level_set)
            for k in TRAFO_COLUMNS:
                row[k] = max(row.get(k, 0.0), float(np.max(np.abs(cur[k]), initial=0.0)))
                dk = (hi[k] - lo[k]) / (2 * _FD_STEP_T)
                row[k + "_t"] = max(row.get(k + "_t", 0.0), float(np.max(np.abs(dk), initial=0.0)))
        rows.append(row)
    keys = [k for k in TRAFO_COLUMNS] + [k + "_t" for k in TRAFO_COLUMNS]
    slopes = {}
    for k in keys:
        vals = [r[k] for r in rows]
        slopes[k] = float("inf") if max(vals) <= ZERO_FLOOR else loglog_slope(eps_list, vals)
    return rows, slopes


class MeanViolation(ValueError):
    """The two-scale field does not have zero mean over Y_A."""


def cell_mean(f, cell_mesh: PeriodicCellMesh, x=None):
    """``int_{Y_A} f(x, y) dy`` by the degree-5 rule on the template."""
    base = cell_mesh.base
    sel = np.nonzero(base.cell_tag == PHASE_A)[0]
    pts, _, w = fem.quadrature_points(base, sel, degree=5)
    x = np.zeros(base.dim) if x is None else np.asarray(x, float)
    vals = np.asarray(f(np.broadcast_to(x, pts.shape), pts), float)
    return float(np.einsum("eq,q,e->", vals, w, base.volumes[sel]))


def bubble_probes(n: int = 20, dim: int = 2, omega=None, seed: int = 0):
    """Gaussian bumps ``exp(-|x - c|^2 / (2 w^2))`` with Halton centres and widths in [0.15, 0.35].

    The bumps do not vanish on the boundary, so the family is not
    orthogonal to lattice-periodic oscillations.
    """
    from scipy.stats import qmc

    omega = omega or [(0.0, 1.0)] * dim
    lo = np.array([o[0] for o in omega])
    span = np.array([o[1] - o[0] for o in omega])
    pts = qmc.Halton(dim + 1, scramble=True, seed=seed).random(n)
    centres = lo + pts[:, :dim] * span
    widths = (0.15 + 0.2 * pts[:, dim]) * span.min()

    def make(c, w):
        def phi(x):
            return np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * w * w))

        def grad(x):
            return -(x - c) / (w * w) * phi(x)[..., None]

        return phi, grad

    return [make(c, w) for c, w in zip(centres, widths)]


def zero_mean_operator_test(f, eps_list, cell_mesh: PeriodicCellMesh, probes=None, omega=None,
                            mean_tol: float = 1e-8, seed: int = 0):
    """``sup_phi |int_{Omega_A^eps} [f]_eps phi| / |phi|_{H1(Omega_A^eps)}`` per eps and its slope.

    ``f(x, y)`` must have zero mean over Y_A for every x; the mean is
    checked at a few macro points and a violation raises
    :class:`MeanViolation`.
    """
    from .mesh import generate_macro_mesh

    d = cell_mesh.dim
    omega = omega or [(0.0, 1.0)] * d
    for x in np.linspace([o[0] for o in omega], [o[1] for o in omega], 5):
        mean = cell_mean(f, cell_mesh, x)
        if abs(mean) > mean_tol:
            raise MeanViolation(f"cell mean {mean:.3e} at x={x} exceeds {mean_tol:g}")
    probes = probes or bubble_probes(20, d, omega, seed)
    values = []
    for eps in eps_list:
        mesh = generate_macro_mesh(omega, eps, cell_mesh)
        sel = np.nonzero(mesh.cell_tag == PHASE_A)[0]
        pts, _, w = fem.quadrature_points(mesh, sel, degree=5)
        wv = w[None, :] * mesh.volumes[sel][:, None]
        # cell coordinate from the containing eps-cell (centroid), robust on cell faces
        k, _ = unfold(mesh.centroids[sel], eps)
        lo = np.array([o[0] for o in omega])
        y = (pts - lo) / eps - k[:, None, :]
        fx = np.asarray(f(pts, y), float)
        best = 0.0
        for phi, grad in probes:
            num = abs(float(np.sum(wv * fx * phi(pts))))
            h1 = np.sqrt(float(np.sum(wv * (phi(pts) ** 2 + np.sum(grad(pts) ** 2, axis=-1)))))
            best = max(best, num / h1)
        values.append(best)
    slope = float("inf") if max(values) <= ZERO_FLOOR else loglog_slope(eps_list, values)
    return values, slope


def chain_rule_check(f, grad_x, grad_y, mesh: TaggedMesh, eps: float):
    """Max relative deviation of the discrete gradient of ``[f]_eps`` from the chain rule.

    Compares the P1 gradient of the nodal reconstruction with
    ``[grad_x f]_eps + [grad_y f]_eps / eps`` at cell centroids.
    """
    vals = reconstruct(f, eps, mesh)
    g = cell_grad(mesh, vals)
    c = mesh.centroids
    _, y = unfold(c, eps)
    exact = np.asarray(grad_x(c, y), float) + np.asarray(grad_y(c, y), float) / eps
    scale = np.max(np.abs(exact))
    return float(np.max(np.abs(g - exact)) / scale) if scale > 0 else float(np.max(np.abs(g)))
