"""Two-scale limit model.

Macroscopic thermoelasticity for ``(u_A, theta_A)`` on Omega with the
effective coefficients of :mod:`thermohom.cell_problems`, coupled through
``A^h = int_{Y_B} (c_B^r Theta_B + gamma_B^r : grad_y U_B) dy`` to inclusion
problems for ``(U_B, Theta_B)`` on Y_B whose Dirichlet data on Gamma are the
macro values at the attached point.

Micro problems live on a coarse sub-lattice of the macro nodes (every
``micro_stride``-th node per axis) and are interpolated linearly in x.
Both levels are linear, so one implicit Euler step can eliminate the micro
interior unknowns exactly: at micro point ``j``

    X_I = w_p + Z g_j,      g_j = (u_A(x_j), theta_A(x_j)),

and the new ``A^h_j = a0_j + a_j . g_j`` is affine in the macro trace.  With
``coupling="condensed"`` (default) this enters the macro heat rows and the
step is fully implicit; ``coupling="staggered"`` lags ``A^h`` and runs
fixed-point sweeps instead.
"""
from __future__ import annotations

import csv
import logging
import tempfile
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from . import fem
from .cell_problems import CellCoefficients, interface_averages, parameter_range
from .fem import AssemblyPlan, SolverError
from .linalg import BlockSolver
from .material import (pullback_capacity, pullback_conductivity, pullback_coupling,
                       pullback_stiffness, pullback_velocity)
from .mesh import PHASE_B, PeriodicCellMesh, TaggedMesh, box_mesh, write_vtk
from .problem import Problem, eval_source

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# micro level
# --------------------------------------------------------------------------
class MicroTemplate:
    """Y_B part of the cell template with dofs split into interior and Gamma.

    Micro dofs are node-major with ``dim + 1`` components per node, the last
    one being the temperature.  Interior dofs are numbered
    ``i * (dim + 1) + comp`` over :attr:`interior`; Gamma dofs collapse to
    their component because the trace is constant on Gamma.
    """

    def __init__(self, cell_mesh: PeriodicCellMesh):
        base = cell_mesh.base
        self.base = base
        d = self.dim = base.dim
        nc = self.ncomp = d + 1
        self.sel = np.nonzero(base.cell_tag == PHASE_B)[0]
        self.empty = len(self.sel) == 0
        cells = base.cells[self.sel]
        self.nodes = np.unique(cells)
        on_gamma = np.isin(self.nodes, base.interface_nodes)
        self.interior = self.nodes[~on_gamma]
        self.gamma = self.nodes[on_gamma]
        self.n_I = len(self.interior)
        self.n_dofs = self.n_I * nc
        idx = np.full(base.n_nodes, -1, dtype=np.int64)
        idx[self.interior] = np.arange(self.n_I)
        self.interior_index = idx
        ci = idx[cells]
        comp = np.arange(nc)
        dI = np.where(ci[:, :, None] >= 0, ci[:, :, None] * nc + comp, -1).reshape(len(cells), (d + 1) * nc)
        isg = np.isin(cells, self.gamma)
        dG = np.where(isg[:, :, None], np.broadcast_to(comp, isg.shape + (nc,)), -1).reshape(len(cells), (d + 1) * nc)
        self.dof_I, self.dof_G = dI, dG
        self.plan_II = AssemblyPlan(dI, dI, (self.n_dofs, self.n_dofs))
        self.plan_IG = AssemblyPlan(dI, dG, (self.n_dofs, nc))
        # combined index for vectors over interior dofs followed by the nc Gamma components
        self.dof_all = np.where(dI >= 0, dI, self.n_dofs + np.where(dG >= 0, dG, 0))
        self.G = base.gradients[self.sel]
        self.vol = base.volumes[self.sel]
        self.centroids = base.centroids[self.sel]
        self.quad_pts, self.quad_bary, self.quad_w = fem.quadrature_points(base, self.sel)
        k = d + 1
        self.u_local = (np.arange(k)[:, None] * nc + np.arange(d)).ravel()   # (a, c) -> a*nc + c
        self.t_local = np.arange(k) * nc + d

    def full_field(self, X, g):
        """Nodal values on all template nodes of Y_B: ``(m, n_nodes, nc)`` (zero elsewhere)."""
        m = X.shape[0]
        out = np.zeros((m, self.base.n_nodes, self.ncomp))
        out[:, self.interior] = X.reshape(m, self.n_I, self.ncomp)
        out[:, self.gamma] = g[:, None, :]
        return out


@dataclass
class MicroBlock:
    """Condensed micro systems of a chunk of micro points at one time level."""

    Dg: np.ndarray       # (m, e, k, k*dim) local gamma : grad blocks
    lump: np.ndarray     # (m, e) lumped capacity per cell
    h_I: np.ndarray      # (m, n_dofs)
    h_G: np.ndarray      # (m, nc)
    w_p: np.ndarray      # (m, n_dofs)
    Z: np.ndarray        # (m, n_dofs, nc)
    a0: np.ndarray       # (m,)
    a: np.ndarray        # (m, nc)


class MicroSolver:
    """Implicit Euler for the inclusion problems at a set of macro points."""

    def __init__(self, template: MicroTemplate, problem: Problem, points, chunk: int = 128):
        self.tpl = template
        self.problem = problem
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.chunk = max(1, int(chunk))
        self.slices = [slice(i, min(i + self.chunk, len(self.points)))
                       for i in range(0, len(self.points), self.chunk)]
        self.material = problem.material.effective()

    @property
    def n_points(self):
        return len(self.points)

    # -- assembly -------------------------------------------------------------
    def _coefficients(self, t, xs):
        tpl = self.tpl
        d = tpl.dim
        mat = self.material
        cf = self.problem.smap.cell_fields(t, xs[:, None, :], tpl.centroids[None, :, :])
        m, e = len(xs), len(tpl.sel)
        F = np.broadcast_to(cf.F, (m, e, d, d)).reshape(-1, d, d)
        v = np.broadcast_to(cf.v, (m, e, d)).reshape(-1, d)
        return dict(
            C=pullback_stiffness(np.asarray(mat.C_B, float), F),
            K=pullback_conductivity(np.asarray(mat.K_B, float), F),
            alpha=pullback_coupling(np.asarray(mat.alpha_B, float), F),
            gamma=pullback_coupling(np.asarray(mat.gamma_B, float), F),
            c=pullback_capacity(mat.c_B, F),
            v=pullback_velocity(v, F),
        )

    def _locals(self, t, dt, xs):
        """Local system matrices ``(m, e, k*nc, k*nc)`` and the time-derivative pieces.

        Returns ``(S, Dg, lump)`` where ``Dg`` is the local ``gamma : grad``
        block ``(m, e, k, k*d)`` and ``lump`` the lumped capacity ``(m, e)``.
        """
        tpl = self.tpl
        d, nc = tpl.dim, tpl.ncomp
        m, e = len(xs), len(tpl.sel)
        k = d + 1
        M = m * e
        co = self._coefficients(t, xs)
        G = np.broadcast_to(tpl.G, (m, e, k, d)).reshape(-1, k, d)
        vol = np.broadcast_to(tpl.vol, (m, e)).reshape(-1)
        S = np.empty((M, k, nc, k, nc))
        S[:, :, :d, :, :d] = fem.local_elasticity(G, vol, co["C"]).reshape(M, k, d, k, d)
        Ba = fem.local_div_coupling(G, vol, co["alpha"]).reshape(M, k, k, d)
        S[:, :, :d, :, d] = -np.transpose(Ba, (0, 2, 3, 1))
        Dg = fem.local_div_coupling(G, vol, co["gamma"])
        Tg = fem.local_transport_coupling(G, vol, co["v"], co["gamma"])
        S[:, :, d, :, :d] = (Dg / dt + Tg).reshape(M, k, k, d)
        lump = co["c"] * vol / k
        Stt = fem.local_diffusion(G, vol, co["K"]) + fem.local_transport(G, vol, co["c"], co["v"])
        Stt[:, np.arange(k), np.arange(k)] += (lump / dt)[:, None]
        S[:, :, d, :, d] = Stt
        return S.reshape(m, e, k * nc, k * nc), Dg.reshape(m, e, k, k * d), lump.reshape(m, e)

    def _h(self, Dg, lump):
        """``A^h`` weights: lumped capacity on theta dofs, column sums of ``D_gamma`` on u dofs."""
        tpl = self.tpl
        m, e, k, kd = Dg.shape
        hl = np.empty((m, e, k, tpl.ncomp))
        hl[..., : tpl.dim] = Dg.sum(axis=2).reshape(m, e, k, tpl.dim)
        hl[..., tpl.dim] = lump[..., None]
        h = _scatter_rows(tpl.dof_all, hl.reshape(m, e, -1), tpl.n_dofs + tpl.ncomp)
        return h[:, : tpl.n_dofs], h[:, tpl.n_dofs:]

    def old_term(self, Dg, lump, X, g):
        """Interior rows of ``D_gamma U + M_c Theta`` for states ``X`` with traces ``g``."""
        tpl = self.tpl
        d, nc = tpl.dim, tpl.ncomp
        m = X.shape[0]
        full = np.concatenate([X, g], axis=1)                    # interior dofs, then Gamma comps
        loc = full[:, tpl.dof_all].reshape(m, -1, d + 1, nc)     # (m, e, k, nc)
        rows = np.einsum("mead,med->mea", Dg, loc[..., :d].reshape(m, loc.shape[1], -1)) \
            + lump[..., None] * loc[..., d]
        out = np.zeros((m, loc.shape[1], d + 1, nc))
        out[..., d] = rows
        return _scatter_rows(tpl.dof_I, out.reshape(m, loc.shape[1], -1), tpl.n_dofs)

    def _loads(self, t, xs):
        tpl = self.tpl
        d, nc = tpl.dim, tpl.ncomp
        data = self.problem.data
        m = len(xs)
        out = np.zeros((m, tpl.n_dofs))
        if data.f_u_B is None and data.f_theta_B is None:
            return out
        pts, bary, w = tpl.quad_pts, tpl.quad_bary, tpl.quad_w
        X = np.broadcast_to(xs[:, None, None, :], (m,) + pts.shape)
        e, k = len(tpl.sel), d + 1
        loc = np.zeros((m, e, k, nc))
        if data.f_u_B is not None:
            fu = eval_source(data.f_u_B, t, X, pts[None], (d,))
            loc[..., :d] = np.einsum("meqc,q,qa,e->meac", fu, w, bary, tpl.vol)
        if data.f_theta_B is not None:
            ft = eval_source(data.f_theta_B, t, X, pts[None])
            loc[..., d] = np.einsum("meq,q,qa,e->mea", ft, w, bary, tpl.vol)
        return _scatter_rows(tpl.dof_I, loc.reshape(m, e, -1), tpl.n_dofs)

    def assemble(self, t, dt, sl):
        tpl = self.tpl
        xs = self.points[sl]
        S, Dg, lump = self._locals(t, dt, xs)
        h_I, h_G = self._h(Dg, lump)
        return dict(S_II=tpl.plan_II.build_block_diag(S), S_IG=tpl.plan_IG.build_block_diag(S),
                    Dg=Dg, lump=lump, h_I=h_I, h_G=h_G, F=self._loads(t, xs), m=len(xs))

    # -- states ---------------------------------------------------------------
    def initial(self, theta_A0):
        """Interior state at t=0 plus the old-term vector and ``A^h``.

        ``theta_A0`` holds the macro initial temperature at the micro points.
        """
        tpl = self.tpl
        data = self.problem.data
        d, nc = tpl.dim, tpl.ncomp
        X = np.zeros((self.n_points, tpl.n_I, nc))
        if data.theta0_B is not None and tpl.n_I:
            y = tpl.base.vertices[tpl.interior]
            X[..., d] = np.asarray(data.theta0_B(self.points[:, None, :], y[None, :, :]), float)
        X = X.reshape(self.n_points, -1)
        g = np.zeros((self.n_points, nc))
        g[:, d] = theta_A0
        o = np.zeros_like(X)
        Ah = np.zeros(self.n_points)
        for sl in self.slices:
            _, Dg, lump = self._locals(0.0, 1.0, self.points[sl])
            h_I, h_G = self._h(Dg, lump)
            o[sl] = self.old_term(Dg, lump, X[sl], g[sl])
            Ah[sl] = _average(h_I, h_G, X[sl], g[sl])
        return X, g, o, Ah

    def condense(self, t, dt, o_old):
        """Factor the micro systems at ``t`` and return one :class:`MicroBlock` per chunk."""
        blocks = []
        nc = self.tpl.ncomp
        for sl in self.slices:
            sys = self.assemble(t, dt, sl)
            m = sys["m"]
            try:
                lu = spla.splu(sps.csc_matrix(sys["S_II"]), permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise SolverError(f"micro factorization failed for points {sl.start}..{sl.stop - 1}: {exc}") \
                    from exc
            rhs = np.empty((sys["S_II"].shape[0], 1 + nc))
            rhs[:, 0] = (sys["F"] + o_old[sl] / dt).ravel()
            # Gamma columns of one micro point only act on its own block
            SG = sys["S_IG"].tocsc()
            for c in range(nc):
                rhs[:, 1 + c] = -np.asarray(SG[:, c::nc].sum(axis=1)).ravel()
            sol = lu.solve(rhs)
            n = self.tpl.n_dofs
            w_p = sol[:, 0].reshape(m, n)
            Z = sol[:, 1:].reshape(m, n, nc)
            a0 = np.einsum("md,md->m", sys["h_I"], w_p)
            a = np.einsum("md,mdc->mc", sys["h_I"], Z) + sys["h_G"]
            blocks.append(MicroBlock(sys["Dg"], sys["lump"], sys["h_I"], sys["h_G"], w_p, Z, a0, a))
        return blocks

    def recover(self, blocks, g):
        """Interior states, new old-term vectors and ``A^h`` for traces ``g``."""
        n = self.tpl.n_dofs
        X = np.empty((self.n_points, n))
        o = np.empty_like(X)
        Ah = np.empty(self.n_points)
        for sl, b in zip(self.slices, blocks):
            X[sl] = b.w_p + np.einsum("mdc,mc->md", b.Z, g[sl])
            o[sl] = self.old_term(b.Dg, b.lump, X[sl], g[sl])
            Ah[sl] = _average(b.h_I, b.h_G, X[sl], g[sl])
        return X, o, Ah

    @staticmethod
    def affine(blocks):
        return np.concatenate([b.a0 for b in blocks]), np.concatenate([b.a for b in blocks])


def _average(h_I, h_G, X, g):
    return np.einsum("md,md->m", h_I, X) + np.einsum("mc,mc->m", h_G, g)


def _scatter_rows(dofs, local, n):
    """Batched ``bincount``: sum ``local[m, e, j]`` into ``out[m, dofs[e, j]]`` (negative dofs dropped)."""
    m = local.shape[0]
    idx = np.where(dofs >= 0, dofs, n).ravel()
    flat = (idx[None, :] + (n + 1) * np.arange(m)[:, None]).ravel()
    return np.bincount(flat, weights=local.reshape(-1), minlength=m * (n + 1)).reshape(m, n + 1)[:, :n]


def micro_step(template: MicroTemplate, problem: Problem, x, g, state, t, dt):
    """One implicit Euler step of the inclusion problem at macro points ``x``.

    ``g`` holds the new Gamma traces ``(u_A, theta_A)`` per point and
    ``state = (X, o)`` the previous interior values and old-term vector.
    Returns ``(X, o, A_h)``.
    """
    solver = MicroSolver(template, problem, x)
    X, o = state
    blocks = solver.condense(t, dt, np.atleast_2d(o))
    return solver.recover(blocks, np.atleast_2d(g))


# --------------------------------------------------------------------------
# macro level and time loop
# --------------------------------------------------------------------------
@dataclass
class TwoScaleState:
    """Macro fields on all macro nodes and micro interiors at the micro points."""

    t: float
    u_A: np.ndarray          # (n_nodes, dim)
    theta_A: np.ndarray      # (n_nodes,)
    micro: np.ndarray        # (n_points, n_dofs) interior micro values
    trace: np.ndarray        # (n_points, dim + 1) Gamma values (u_A, theta_A)
    A_h: np.ndarray          # (n_points,)


@dataclass
class TwoScaleSolution:
    mesh: TaggedMesh
    coarse: TaggedMesh
    template: MicroTemplate
    cells: CellCoefficients
    states: list = field(default_factory=list)
    iterations: dict = field(default_factory=dict)
    sweep_increments: list = field(default_factory=list)

    @property
    def times(self):
        return [s.t for s in self.states]

    def micro_fields(self, index):
        """``(U_B, Theta_B)`` on all template nodes for every micro point."""
        s = self.states[index]
        full = self.template.full_field(s.micro, s.trace)
        d = self.template.dim
        return full[..., :d], full[..., d]

    def write_vtk(self, path, index=-1):
        s = self.states[index]
        write_vtk(self.mesh, path, point_data={"u_A": s.u_A, "theta_A": s.theta_A})

    def write_micro_vtk(self, path, point, index=-1):
        """Micro fields of one micro point on the Y_B submesh."""
        tpl = self.template
        U, Th = self.micro_fields(index)
        sub = TaggedMesh(tpl.base.vertices, tpl.base.cells[tpl.sel], tpl.base.cell_tag[tpl.sel],
                         np.zeros((0, tpl.dim), int), np.zeros((0, tpl.dim)), np.zeros((0, 2), int),
                         np.zeros((0, tpl.dim), int))
        write_vtk(sub, path, point_data={"U_B": U[point], "Theta_B": Th[point]})

    def export_A_h(self, path):
        """``A^h`` time series at every micro point."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            d = self.coarse.dim
            w.writerow(["t", "point"] + [f"x{i}" for i in range(d)] + ["A_h"])
            for s in self.states:
                for j, (x, a) in enumerate(zip(self.coarse.vertices, s.A_h)):
                    w.writerow([repr(float(s.t)), j] + [repr(float(c)) for c in x] + [repr(float(a))])


def _lattice_match(fine: TaggedMesh, points, tol=1e-10):
    dist, idx = cKDTree(fine.vertices).query(points)
    if np.any(dist > tol):
        raise ValueError("micro points are not macro mesh nodes")
    return idx


class TwoScaleSolver:
    """Macro step on a structured mesh of Omega with condensed or staggered micro coupling."""

    def __init__(self, problem: Problem, cell_mesh: PeriodicCellMesh, n_macro: int = 128,
                 micro_stride: int = 4, coupling: str = "condensed", sweeps: int = 1, tol: float = 1e-10,
                 cells: CellCoefficients | None = None, chunk: int = 128):
        if coupling not in ("condensed", "staggered"):
            raise ValueError(f"unknown coupling {coupling!r}")
        if n_macro % micro_stride:
            raise ValueError("micro_stride must divide n_macro")
        self.problem = problem
        self.coupling = coupling
        self.sweeps = int(sweeps)
        self.mesh = box_mesh(problem.omega, n_macro)
        self.coarse = box_mesh(problem.omega, n_macro // micro_stride)
        self.asm = fem_asm = MacroAssembler(self.mesh)
        self.W = fem.interpolation_matrix(self.coarse, self.mesh.vertices)[fem_asm.free].tocsr()
        self.point_nodes = _lattice_match(self.mesh, self.coarse.vertices)
        self.point_free = fem_asm.node_index[self.point_nodes]
        self.mass = fem_asm.lumped(np.ones(self.mesh.n_cells))
        level_set = problem.level_set()
        if cells is None:
            cells = CellCoefficients(cell_mesh, problem.material, problem.smap, level_set,
                                     p_range=parameter_range(problem.smap, problem.T, problem.omega))
        self.cells = cells
        self.cell_mesh = cell_mesh
        self.level_set = level_set
        self.template = MicroTemplate(cell_mesh)
        self.micro = MicroSolver(self.template, problem, self.coarse.vertices, chunk)
        self.blocks = BlockSolver(fem_asm.n_u, tol, dim=self.mesh.dim)
        self.sweep_increments: list[list[float]] = []

    # -- data ----------------------------------------------------------------
    def _macro_matrices(self, t):
        co = self.cells.coefficients(t, self.mesh.centroids)
        return self.asm.matrices(co)

    def _point_data(self, t):
        """``f_u^h + H^h`` and ``f_theta^h - L_AB W^h`` at the micro points."""
        p = self.problem
        xs = self.coarse.vertices
        W, H = interface_averages(self.cell_mesh, p.smap, self.level_set, t, xs)
        fu, ft = _source_averages(self.cell_mesh, p.data, t, xs)
        return fu + H, ft - p.material.L_AB * W

    def _loads(self, t):
        fu, ft = self._point_data(t)
        Fu = (self.mass[:, None] * (self.W @ fu)).ravel()
        Ft = self.mass * (self.W @ ft)
        return Fu, Ft

    def _coupling_matrices(self, a, dt):
        """Heat-row blocks ``diag(m/dt) W diag(a) E`` for theta and u traces."""
        asm = self.asm
        d = self.mesh.dim
        inner = np.nonzero(self.point_free >= 0)[0]
        Wc = sps.diags(self.mass / dt) @ self.W[:, inner]
        Wc = Wc.tocoo()
        f = self.point_free[inner][Wc.col]
        Q_tt = sps.csr_matrix((Wc.data * a[inner, d][Wc.col], (Wc.row, f)), shape=(asm.n_t, asm.n_t))
        rows, cols, vals = [], [], []
        for c in range(d):
            rows.append(Wc.row)
            cols.append(f * d + c)
            vals.append(Wc.data * a[inner, c][Wc.col])
        Q_tu = sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(asm.n_t, asm.n_u))
        return Q_tt, Q_tu

    def _traces(self, U, Th):
        d = self.mesh.dim
        g = np.zeros((len(self.point_nodes), d + 1))
        g[:, :d] = U[self.point_nodes]
        g[:, d] = Th[self.point_nodes]
        return g

    # -- time loop -------------------------------------------------------------
    def initial_state(self):
        p = self.problem
        th = np.zeros(self.mesh.n_nodes)
        if p.data.theta0_A is not None:
            th = np.broadcast_to(np.asarray(p.data.theta0_A(self.mesh.vertices), float), th.shape).copy()
        th[self.mesh.boundary_nodes] = 0.0
        U = np.zeros((self.mesh.n_nodes, self.mesh.dim))
        if self.template.empty:
            X = np.zeros((self.micro.n_points, 0))
            o = X.copy()
            g = self._traces(U, th)
            Ah = np.zeros(self.micro.n_points)
        else:
            X, g, o, Ah = self.micro.initial(th[self.point_nodes])
        m = self._macro_matrices(0.0)
        self._old = dict(m_c=m["m_c"], D_gamma=m["D_gamma"], o=o)
        return TwoScaleState(0.0, U, th, X, g, Ah)

    def step(self, state: TwoScaleState, dt: float) -> TwoScaleState:
        if dt <= 0:
            raise ValueError("dt must be positive")
        t = state.t + dt
        asm = self.asm
        d = self.mesh.dim
        old = self._old
        np_ = self.micro.n_points
        if self.template.empty:
            blocks, a0, a = None, np.zeros(np_), np.zeros((np_, d + 1))
        else:
            blocks = self.micro.condense(t, dt, old["o"])
            a0, a = self.micro.affine(blocks)
        m = self._macro_matrices(t)
        Fu, Ft = self._loads(t)
        U0, T0 = asm.restrict_u(state.u_A), asm.restrict_t(state.theta_A)
        rhs_t = Ft + old["m_c"] * T0 / dt
        if old["D_gamma"] is not None:
            rhs_t = rhs_t + old["D_gamma"] @ U0 / dt
        Hbase = (sps.diags(m["m_c"] / dt) + m["A_K"]).tocsr()
        L0 = None if m["D_gamma"] is None else (m["D_gamma"] / dt).tocsr()
        if self.coupling == "condensed":
            Q_tt, Q_tu = self._coupling_matrices(a, dt)
            H = (Hbase + Q_tt).tocsr()
            Hsym = (Hbase + sps.diags(np.asarray(abs(Q_tt).sum(axis=1)).ravel())).tocsr()
            L = L0
            if np.any(Q_tu.data):
                L = Q_tu if L0 is None else (L0 + Q_tu).tocsr()
            rhs = rhs_t + self.mass * (self.W @ (state.A_h - a0)) / dt
            U, Th = self.blocks.solve(m["K_uu"], m["B_alpha"], L, H, Hsym, Fu, rhs, U0, T0)
            g = self._traces(asm.extend_u(U), asm.extend_t(Th))
        else:
            # A^h lagged at the latest iterate; each sweep refreshes it from the micro traces
            Ah_it = state.A_h.copy()
            incs = []
            U, Th = U0, T0
            for _ in range(self.sweeps + 1):
                rhs = rhs_t + self.mass * (self.W @ (state.A_h - Ah_it)) / dt
                U, Th = self.blocks.solve(m["K_uu"], m["B_alpha"], L0, Hbase, Hbase, Fu, rhs, U, Th)
                g = self._traces(asm.extend_u(U), asm.extend_t(Th))
                new = a0 + np.einsum("jc,jc->j", a, g)
                incs.append(float(np.max(np.abs(new - Ah_it), initial=0.0)))
                Ah_it = new
            self.sweep_increments.append(incs)
            if incs[-1] > 1e-6 * max(1.0, float(np.max(np.abs(Ah_it), initial=0.0))):
                log.warning("staggered sweeps at t=%.4g not converged (last increment %.2e)", t, incs[-1])
        if blocks is None:
            X, o, Ah = state.micro, old["o"], np.zeros(np_)
        else:
            X, o, Ah = self.micro.recover(blocks, g)
        self._old = dict(m_c=m["m_c"], D_gamma=m["D_gamma"], o=o)
        return TwoScaleState(t, asm.extend_u(U), asm.extend_t(Th), X, g, Ah)


class MacroAssembler:
    """Plans of :class:`thermohom.eps_solver.EpsAssembler` with effective coefficients."""

    def __init__(self, mesh):
        from .eps_solver import EpsAssembler

        self._asm = EpsAssembler(mesh)

    def __getattr__(self, name):
        return getattr(self._asm, name)

    def matrices(self, co):
        a = self._asm
        G, vol = a.G, a.vol
        out = dict(K_uu=a.plan_uu.build(fem.local_elasticity(G, vol, co["C_h"])),
                   A_K=a.plan_tt.build(fem.local_diffusion(G, vol, co["K_h"])),
                   m_c=a.lumped(co["c_h"]), B_alpha=None, D_gamma=None)
        if np.any(co["alpha_h"]):
            out["B_alpha"] = a.plan_tu.build(fem.local_div_coupling(G, vol, co["alpha_h"]))
        if np.any(co["gamma_h"]):
            out["D_gamma"] = a.plan_tu.build(fem.local_div_coupling(G, vol, co["gamma_h"]))
        return out


def _source_averages(cell_mesh, data, t, xs):
    """Cell averages of the sources at many macro points (degree-2 quadrature)."""
    base = cell_mesh.base
    d = base.dim
    n = len(xs)
    fu = np.zeros((n, d))
    ft = np.zeros(n)
    for tag, f_u, f_t in ((0, data.f_u_A, data.f_theta_A), (PHASE_B, data.f_u_B, data.f_theta_B)):
        sel = np.nonzero(base.cell_tag == tag)[0]
        if len(sel) == 0 or (f_u is None and f_t is None):
            continue
        pts, _, w = fem.quadrature_points(base, sel)
        wq = w[None, :] * base.volumes[sel][:, None]
        X = np.broadcast_to(xs[:, None, None, :], (n,) + pts.shape)
        if f_u is not None:
            fu += np.einsum("neqc,eq->nc", eval_source(f_u, t, X, pts[None], (d,)), wq)
        if f_t is not None:
            ft += np.einsum("neq,eq->n", eval_source(f_t, t, X, pts[None]), wq)
    return fu, ft


Observer = Callable[[int, TwoScaleState], None]
SPOOL_BYTES = 256 * 2**20


def solve_twoscale(problem: Problem, cell_mesh: PeriodicCellMesh, n_macro: int = 128, micro_stride: int = 4,
                   coupling: str = "condensed", sweeps: int = 1, tol: float = 1e-10,
                   cells: CellCoefficients | None = None, observer: Observer | None = None,
                   store: bool = True) -> TwoScaleSolution:
    """Integrate the two-scale model over ``[0, T]``."""
    solver = TwoScaleSolver(problem, cell_mesh, n_macro, micro_stride, coupling, sweeps, tol, cells)
    sol = TwoScaleSolution(solver.mesh, solver.coarse, solver.template, solver.cells)
    state = solver.initial_state()
    n_steps = problem.n_steps if problem.T > 0 else 0
    spool = None
    if store and state.micro.nbytes * (n_steps + 1) > SPOOL_BYTES:
        # the micro trajectory dominates memory; keep it in a file-backed array
        spool = np.memmap(tempfile.TemporaryFile(), dtype=state.micro.dtype, mode="w+",
                          shape=(n_steps + 1,) + state.micro.shape)

    def emit(n, st):
        if observer is not None:
            observer(n, st)
        if store:
            if spool is not None:
                spool[n] = st.micro
                st = replace(st, micro=spool[n])
            sol.states.append(st)

    emit(0, state)
    for n in range(1, n_steps + 1):
        try:
            state = solver.step(state, problem.dt)
        except SolverError as exc:
            raise SolverError(f"two-scale step {n} failed: {exc}", exc.residual) from exc
        emit(n, state)
    sol.iterations = solver.blocks.iterations()
    sol.sweep_increments = solver.sweep_increments
    return sol
