"""Periodic cell problems on Y_A and the averaged (effective) coefficients.

Three families of problems are solved on the matrix phase of the unit cell,
all with periodic boundary conditions and zero mean over Y_A:

* ``tau_theta[j]``   conduction correctors (unit macroscopic gradient e_j),
* ``tau_u[j][k]``    elastic correctors (unit macroscopic strain),
* ``tau_alpha``      thermal-expansion corrector (unit temperature).

The transformed coefficients depend on ``(t, x)`` only through the
deformation map; :class:`CellCoefficients` memoises the solves and, for maps
with a scalar reduction, interpolates them in that parameter on a Chebyshev
grid.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
import sympy as sp

from . import fem
from .geometry import DeformationMap, LevelSet
from .material import (MaterialParameters, pullback_capacity, pullback_conductivity,
                       pullback_coupling, pullback_stiffness)
from .mesh import PHASE_A, PHASE_B, PeriodicCellMesh


def unit_strains(dim):
    """``E[j, k] = sym(e_k (x) e_j)``, the strain of ``d_jk = y_j e_k``."""
    E = np.zeros((dim, dim, dim, dim))
    for j, k in itertools.product(range(dim), repeat=2):
        E[j, k, k, j] += 0.5
        E[j, k, j, k] += 0.5
    return E


@dataclass
class CellSolution:
    """Cell correctors as nodal values on the full template mesh.

    Values on nodes outside the closure of Y_A are zero.  ``stamp`` records
    the ``(t, x)`` (or reduced parameter) of the transformed coefficients.
    """

    tau_theta: np.ndarray   # (dim, N)
    tau_u: np.ndarray       # (dim, dim, N, dim)
    tau_alpha: np.ndarray   # (N, dim)
    stamp: tuple = ()
    residual: float = 0.0


@dataclass
class EffectiveCoefficients:
    C_h: np.ndarray
    K_h: np.ndarray
    alpha_h: np.ndarray
    gamma_h: np.ndarray
    c_h: float
    W_Gamma_h: float = 0.0
    H_Gamma_h: np.ndarray = None
    f_u_h: np.ndarray = None
    f_theta_h: float = 0.0
    volume_A: float = 0.0
    stamp: tuple = ()

    def export_csv(self, path):
        """Row-major listing of every tensor entry with its index tuple."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "index", "value"])
            for name in ("C_h", "K_h", "alpha_h", "gamma_h", "c_h", "W_Gamma_h", "H_Gamma_h",
                         "f_u_h", "f_theta_h"):
                val = getattr(self, name)
                if val is None:
                    continue
                arr = np.atleast_1d(np.asarray(val, dtype=float))
                if np.ndim(val) == 0:
                    w.writerow([name, "()", repr(float(val))])
                    continue
                for idx in itertools.product(*[range(s) for s in arr.shape]):
                    w.writerow([name, str(idx), repr(float(arr[idx]))])


# --------------------------------------------------------------------------
# solver on a fixed cell mesh
# --------------------------------------------------------------------------
class CellProblemSolver:
    """Assembles and solves the periodic Y_A problems for given deformation gradients."""

    def __init__(self, cell_mesh: PeriodicCellMesh, tol: float = 1e-10):
        self.cell_mesh = cell_mesh
        self.tol = tol
        m = cell_mesh.base
        self.mesh = m
        d = self.dim = m.dim
        self.sel = np.nonzero(m.cell_tag == PHASE_A)[0]
        self.sel_B = np.nonzero(m.cell_tag == PHASE_B)[0]
        master = cell_mesh.master
        cells = master[m.cells[self.sel]]
        self.nodes = np.unique(cells)             # periodic unknowns (representatives)
        self.index = np.full(m.n_nodes, -1)
        self.index[self.nodes] = np.arange(len(self.nodes))
        self.lcells = self.index[cells]
        self.G = m.gradients[self.sel]
        self.vol = m.volumes[self.sel]
        self.volume_A = float(self.vol.sum())
        n = len(self.nodes)
        self.n = n
        k = d + 1
        self._plan_s = fem.AssemblyPlan(self.lcells, self.lcells, (n, n))
        vd = fem.vector_dofs(self.lcells, d)
        self._plan_v = fem.AssemblyPlan(vd, vd, (n * d, n * d))
        self._vdofs = vd
        # integrals of the hat functions over Y_A for the mean constraints
        self.hat_int = np.bincount(self.lcells.ravel(), weights=np.repeat(self.vol / k, k), minlength=n)
        # template nodes touched by Y_A (all periodic copies) for scattering back
        self.full_nodes = np.unique(m.cells[self.sel])
        self.E = unit_strains(d)

    # -- assembly helpers ------------------------------------------------
    def centroid_points(self):
        return self.mesh.centroids[self.sel]

    def _scatter(self, vals):
        """Map periodic unknowns back to all template nodes (zero off Y_A)."""
        out = np.zeros((self.mesh.n_nodes,) + vals.shape[1:])
        out[self.full_nodes] = vals[self.index[self.cell_mesh.master[self.full_nodes]]]
        return out

    def _saddle(self, A, C):
        """Solve ``[[A, C], [C^T, 0]]`` for several right-hand sides."""
        K = sps.bmat([[A, sps.csr_matrix(C)], [sps.csr_matrix(C.T), None]], format="csc")
        lu = spla.splu(K)
        return lu, K

    def solve(self, F, material: MaterialParameters, which=("theta", "u", "alpha")):
        """Correctors for deformation gradients ``F`` given at the Y_A cells."""
        d, n = self.dim, self.n
        mat = material.effective()
        F = np.broadcast_to(F, (len(self.sel), d, d))
        out = {}
        res = 0.0
        if "theta" in which:
            Kr = pullback_conductivity(np.asarray(mat.K_A, float), F)
            A = self._plan_s.build(fem.local_diffusion(self.G, self.vol, Kr))
            C = self.hat_int[:, None]
            lu, K = self._saddle(A, C)
            # rhs_i = -int K e_j . grad phi_i
            rhs = np.zeros((n + 1, d))
            for j in range(d):
                loc = -self.vol[:, None] * np.einsum("ek,eak->ea", Kr[:, :, j], self.G)
                rhs[:n, j] = np.bincount(self.lcells.ravel(), weights=loc.ravel(), minlength=n)
            sol = lu.solve(rhs)
            res = max(res, _rel(K, sol, rhs))
            out["tau_theta"] = np.stack([self._scatter(sol[:n, j]) for j in range(d)])
        if "u" in which or "alpha" in which:
            Cr = pullback_stiffness(np.asarray(mat.C_A, float), F)
            A = self._plan_v.build(fem.local_elasticity(self.G, self.vol, Cr))
            C = np.zeros((n * d, d))
            for c in range(d):
                C[c::d, c] = self.hat_int
            lu, K = self._saddle(A, C)
            cols = []
            pairs = list(itertools.product(range(d), repeat=2))
            if "u" in which:
                for j, k in pairs:
                    # rhs = -int C^r E_jk : e(v), e(v) paired through minor symmetry with grad v
                    sig = np.einsum("ecjdl,dl->ecj", Cr, self.E[j, k])
                    loc = -self.vol[:, None, None] * np.einsum("ecj,eaj->eac", sig, self.G)
                    cols.append(np.bincount(self._vdofs.ravel(), weights=loc.ravel(), minlength=n * d))
            if "alpha" in which:
                ar = pullback_coupling(np.asarray(mat.alpha_A, float), F)
                loc = self.vol[:, None, None] * np.einsum("ecj,eaj->eac", ar, self.G)
                cols.append(np.bincount(self._vdofs.ravel(), weights=loc.ravel(), minlength=n * d))
            rhs = np.zeros((n * d + d, len(cols)))
            rhs[: n * d] = np.stack(cols, axis=1)
            sol = lu.solve(rhs)
            res = max(res, _rel(K, sol, rhs))
            i = 0
            if "u" in which:
                tu = np.zeros((d, d, self.mesh.n_nodes, d))
                for j, k in pairs:
                    tu[j, k] = self._scatter(sol[: n * d, i].reshape(n, d))
                    i += 1
                out["tau_u"] = tu
            if "alpha" in which:
                out["tau_alpha"] = self._scatter(sol[: n * d, i].reshape(n, d))
        N = self.mesh.n_nodes
        return CellSolution(out.get("tau_theta", np.zeros((d, N))),
                            out.get("tau_u", np.zeros((d, d, N, d))),
                            out.get("tau_alpha", np.zeros((N, d))), residual=res)

    # -- gradients of corrector fields on Y_A cells ---------------------
    def grad(self, nodal):
        """Elementwise gradient on Y_A cells of a template nodal field."""
        c = self.mesh.cells[self.sel]
        v = nodal[c]
        if v.ndim == 2:
            return np.einsum("ea,eak->ek", v, self.G)
        return np.einsum("eac,eak->eck", v, self.G)

    def sym_grad(self, nodal):
        g = self.grad(nodal)
        return 0.5 * (g + np.swapaxes(g, -1, -2))

    def mean(self, nodal):
        """Integral over Y_A of a nodal field."""
        c = self.mesh.cells[self.sel]
        return np.einsum("e,ea...->...", self.vol / (self.dim + 1), nodal[c])

    # -- effective coefficients -----------------------------------------
    def volume_coefficients(self, sol: CellSolution, F, material: MaterialParameters, energy_form=False):
        """C_h, K_h, alpha_h, gamma_h, c_h from the Y_A volume integrals."""
        d = self.dim
        mat = material.effective()
        F = np.broadcast_to(F, (len(self.sel), d, d))
        vol = self.vol
        Kr = pullback_conductivity(np.asarray(mat.K_A, float), F)
        Cr = pullback_stiffness(np.asarray(mat.C_A, float), F)
        ar = pullback_coupling(np.asarray(mat.alpha_A, float), F)
        gr = pullback_coupling(np.asarray(mat.gamma_A, float), F)
        cr = pullback_capacity(mat.c_A, F)
        I = np.eye(d)
        gt = np.stack([self.grad(sol.tau_theta[j]) + I[j] for j in range(d)])  # (j, e, k)
        if energy_form:
            K_h = np.einsum("e,ekl,jel,ik->ij", vol, Kr, gt, I)
        else:
            K_h = np.einsum("e,ekl,jel,iek->ij", vol, Kr, gt, gt)
        eu = np.zeros((d, d, len(vol), d, d))
        for j, k in itertools.product(range(d), repeat=2):
            eu[j, k] = self.sym_grad(sol.tau_u[j, k]) + self.E[j, k]
        if energy_form:
            C_h = np.einsum("e,epqrs,jkers,ilpq->iljk", vol, Cr, eu, self.E)
        else:
            C_h = np.einsum("e,epqrs,jkers,ilepq->iljk", vol, Cr, eu, eu)
        ea = self.sym_grad(sol.tau_alpha)
        alpha_h = np.einsum("e,eij->ij", vol, ar - np.einsum("eijkl,ekl->eij", Cr, ea))
        ga = self.grad(sol.tau_alpha)
        G = np.einsum("e,eab,jkeab->jk", vol, gr, np.stack([[self.grad(sol.tau_u[j, k]) for k in range(d)]
                                                                 for j in range(d)]))
        gamma_h = np.einsum("e,eij->ij", vol, gr) + G
        c_h = float(np.sum(vol * cr) + np.einsum("e,eij,eij->", vol, gr, ga))
        return dict(C_h=C_h, K_h=K_h, alpha_h=alpha_h, gamma_h=gamma_h, c_h=c_h)


def _rel(K, x, b):
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(K @ x - b) / nb) if nb > 0 else float(np.linalg.norm(K @ x))


# --------------------------------------------------------------------------
# interface and source averages (evaluated directly, cheap)
# --------------------------------------------------------------------------
def interface_averages(cell_mesh: PeriodicCellMesh, smap: DeformationMap, level_set: LevelSet, t, x):
    """``W_h = int_Gamma W |J F^-T n| ds`` and ``H_h = int_Gamma H J F^-T n ds``.

    ``x`` may be a single point or a stack ``(n, dim)``; facet midpoints are
    used as quadrature points and ``n`` is the discrete facet normal.
    """
    m = cell_mesh.base
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    d = m.dim
    if len(m.interface_facets) == 0 or level_set is None or level_set.empty:
        W = np.zeros(len(xs))
        H = np.zeros((len(xs), d))
        return (W[0], H[0]) if single else (W, H)
    mid = m.vertices[m.interface_facets].mean(axis=1)
    meas = m.facet_measures
    nrm = m.interface_normals
    cf = smap.cell_fields(np.asarray(t, float)[..., None] if np.ndim(t) else t,
                          xs[:, None, :], mid[None, :, :], level_set)
    nanson = cf.J[..., None] * np.einsum("...ji,...j->...i", cf.Finv, nrm)  # J F^-T n
    W = np.einsum("nf,f->n", cf.W * np.linalg.norm(nanson, axis=-1), meas)
    H = np.einsum("nf,nfi,f->ni", cf.H, nanson, meas)
    return (W[0], H[0]) if single else (W, H)


def source_averages(cell_mesh: PeriodicCellMesh, f_A, f_B, t, x, ncomp=1):
    """``int_{Y_A} f_A(t,x,y) dy + int_{Y_B} f_B(t,x,y) dy`` (degree-2 quadrature)."""
    m = cell_mesh.base
    total = 0.0
    for f, tag in ((f_A, PHASE_A), (f_B, PHASE_B)):
        if f is None:
            continue
        sel = np.nonzero(m.cell_tag == tag)[0]
        if len(sel) == 0:
            continue
        pts, _, w = fem.quadrature_points(m, sel)
        vals = np.asarray(f(t, np.broadcast_to(x, pts.shape), pts), dtype=float)
        vals = np.broadcast_to(vals, pts.shape[:2] + (() if ncomp == 1 else (ncomp,)))
        total = total + np.einsum("eq...,q,e->...", vals, w, m.volumes[sel])
    return total


# --------------------------------------------------------------------------
# spec-level wrappers
# --------------------------------------------------------------------------
def _F_at(smap, t, x, solver):
    return smap.ds_dy(t, np.asarray(x, float), solver.centroid_points())


def solve_theta_cell(t, x, cell_mesh, material, smap, solver=None):
    solver = solver or CellProblemSolver(cell_mesh)
    return solver.solve(_F_at(smap, t, x, solver), material, which=("theta",)).tau_theta


def solve_u_cells(t, x, cell_mesh, material, smap, solver=None):
    solver = solver or CellProblemSolver(cell_mesh)
    return solver.solve(_F_at(smap, t, x, solver), material, which=("u",)).tau_u


def solve_alpha_cell(t, x, cell_mesh, material, smap, solver=None):
    solver = solver or CellProblemSolver(cell_mesh)
    return solver.solve(_F_at(smap, t, x, solver), material, which=("alpha",)).tau_alpha


def solve_cells(t, x, cell_mesh, material, smap, solver=None) -> CellSolution:
    solver = solver or CellProblemSolver(cell_mesh)
    sol = solver.solve(_F_at(smap, t, x, solver), material)
    sol.stamp = (float(t), tuple(np.asarray(x, float)))
    return sol


def assemble_effective(t, x, solution: CellSolution, material, smap, cell_mesh, level_set=None,
                       sources=None, solver=None) -> EffectiveCoefficients:
    """All averaged coefficients at one macro point ``(t, x)``.

    ``sources`` optionally maps ``f_u_A, f_u_B, f_theta_A, f_theta_B`` to
    callables ``f(t, x, y)``.
    """
    stamp = (float(t), tuple(np.asarray(x, float)))
    if solution.stamp and solution.stamp != stamp:
        raise ValueError(f"cell solution stamp {solution.stamp} does not match {stamp}")
    solver = solver or CellProblemSolver(cell_mesh)
    vc = solver.volume_coefficients(solution, _F_at(smap, t, x, solver), material)
    W, H = interface_averages(cell_mesh, smap, level_set, t, x)
    d = solver.dim
    src = sources or {}
    fu = source_averages(cell_mesh, src.get("f_u_A"), src.get("f_u_B"), t, x, ncomp=d)
    ft = source_averages(cell_mesh, src.get("f_theta_A"), src.get("f_theta_B"), t, x)
    return EffectiveCoefficients(**vc, W_Gamma_h=float(W), H_Gamma_h=np.asarray(H),
                                 f_u_h=np.broadcast_to(np.asarray(fu, float), (d,)).copy(),
                                 f_theta_h=float(ft), volume_A=solver.volume_A, stamp=stamp)


# --------------------------------------------------------------------------
# parameter cache
# --------------------------------------------------------------------------
def chebyshev_nodes(a, b, n):
    k = np.arange(n)
    return 0.5 * (a + b) + 0.5 * (b - a) * np.cos(np.pi * (2 * k + 1) / (2 * n))[::-1]


def barycentric_weights(nodes, p):
    """Interpolation weights ``(len(p), len(nodes))`` (exact at the nodes)."""
    nodes = np.asarray(nodes)
    p = np.atleast_1d(np.asarray(p, float))
    n = len(nodes)
    k = np.arange(n)
    # first-kind Chebyshev barycentric weights (valid for any affine image)
    theta = np.pi * (2 * k + 1) / (2 * n)
    w = (-1.0) ** k * np.sin(theta)
    w = w[::-1]
    diff = p[:, None] - nodes[None, :]
    hit = np.isclose(diff, 0.0, atol=1e-15 * max(1.0, np.max(np.abs(nodes))))
    diff = np.where(hit, 1.0, diff)
    q = w / diff
    q = q / q.sum(axis=1, keepdims=True)
    rows = np.any(hit, axis=1)
    q[rows] = hit[rows].astype(float)
    return q


def parameter_range(smap: DeformationMap, T, omega, n=33, pad=0.05):
    """Sampled range of the reduced parameter over ``[0, T] x omega``, padded.

    Returns ``None`` for maps without a reduction.
    """
    if smap.reduction is None:
        return None
    axes = [np.linspace(lo, hi, n) for lo, hi in omega]
    x = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], -1)
    vals = np.concatenate([np.broadcast_to(smap.cell_parameter(t, x), (len(x),))
                           for t in np.linspace(0.0, float(T), 9)])
    lo, hi = float(vals.min()), float(vals.max())
    margin = pad * (hi - lo) + 1e-9
    return lo - margin, hi + margin


@dataclass
class CellCoefficients:
    """Memoised cell solutions and Y_A coefficients as functions of ``(t, x)``.

    For maps with a scalar reduction ``P(t, x)`` the solves are done at
    ``n_cheb`` Chebyshev nodes of ``p_range`` and interpolated; otherwise
    each distinct ``(t, x)`` is solved once.
    """

    cell_mesh: PeriodicCellMesh
    material: MaterialParameters
    smap: DeformationMap
    level_set: LevelSet | None = None
    p_range: tuple | None = None
    n_cheb: int = 13
    solver: CellProblemSolver = None
    _memo: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.solver = self.solver or CellProblemSolver(self.cell_mesh)
        red = self.smap.reduction
        self.reduced = red is not None
        self.constant = self.reduced and sp.sympify(red[0]) == 0
        self.nodes = None
        if self.reduced and not self.constant:
            if self.p_range is None:
                raise ValueError("p_range is required for a reduced map")
            a, b = map(float, self.p_range)
            if b <= a:
                b = a + 1e-12
            self.nodes = chebyshev_nodes(a, b, self.n_cheb)
        self._build()

    def _solve_param(self, p):
        F = self.smap.F_at_parameter(p, self.solver.centroid_points())
        sol = self.solver.solve(F, self.material)
        vc = self.solver.volume_coefficients(sol, F, self.material)
        return sol, vc

    def _build(self):
        if not self.reduced:
            return
        if self.constant:
            sol, vc = self._solve_param(0.0)
            self._stack([sol], [vc])
            return
        sols, vcs = zip(*[self._solve_param(p) for p in self.nodes])
        self._stack(sols, vcs)

    def _stack(self, sols, vcs):
        self.tau_theta = np.stack([s.tau_theta for s in sols])
        self.tau_u = np.stack([s.tau_u for s in sols])
        self.tau_alpha = np.stack([s.tau_alpha for s in sols])
        self.coeffs = {k: np.stack([np.asarray(v[k], float) for v in vcs]) for k in vcs[0]}

    # -- evaluation -----------------------------------------------------
    def parameter(self, t, x):
        return self.smap.cell_parameter(t, x)

    def weights(self, t, x):
        """Interpolation weights ``(n_points, n_nodes)`` for the reduced cache."""
        x = np.atleast_2d(np.asarray(x, float))
        if self.constant:
            return np.ones((len(x), 1))
        p = np.broadcast_to(self.parameter(t, x), (len(x),))
        lo, hi = self.nodes.min(), self.nodes.max()
        span = hi - lo
        a, b = self.p_range
        if np.any(p < a - 1e-9 * max(1, span)) or np.any(p > b + 1e-9 * max(1, span)):
            raise ValueError("parameter outside the cached range")
        return barycentric_weights(self.nodes, p)

    def coefficients(self, t, x):
        """Volume coefficients at each point ``x`` (stack of dicts as arrays)."""
        x = np.atleast_2d(np.asarray(x, float))
        if self.reduced:
            w = self.weights(t, x)
            return {k: np.tensordot(w, v, axes=(1, 0)) for k, v in self.coeffs.items()}
        res = [self._direct(t, xi)[1] for xi in x]
        return {k: np.stack([np.asarray(r[k], float) for r in res]) for k in res[0]}

    def solution(self, t, x) -> CellSolution:
        """Cell correctors at a single point."""
        if self.reduced:
            w = self.weights(t, np.atleast_2d(x))[0]
            return CellSolution(np.tensordot(w, self.tau_theta, 1), np.tensordot(w, self.tau_u, 1),
                                np.tensordot(w, self.tau_alpha, 1), stamp=(float(t), tuple(np.asarray(x, float))))
        return self._direct(t, x)[0]

    def _direct(self, t, x):
        key = (round(float(t), 14),) + tuple(np.round(np.asarray(x, float), 14))
        if key not in self._memo:
            F = _F_at(self.smap, t, x, self.solver)
            sol = self.solver.solve(F, self.material)
            sol.stamp = (float(t), tuple(np.asarray(x, float)))
            self._memo[key] = (sol, self.solver.volume_coefficients(sol, F, self.material))
        return self._memo[key]
