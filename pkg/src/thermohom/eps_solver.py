"""Transformed eps-problem on the fixed, eps-periodic reference geometry.

Unknowns are the displacement ``U`` (node-major vector) and temperature
``Theta`` on one conforming mesh of Omega; the phase-B coefficients carry
the eps-scalings.  Each implicit Euler step solves

    K_uu U - B_alpha^T Theta                         = F_u
    (D_gamma/dt + T_gamma) U + (M_c/dt + A_K + T_c) Theta
                                                     = F_theta + (M_c' Theta' + D_gamma' U')/dt

where primes denote the previous step.  Dirichlet dofs on the outer
boundary are removed from the assembly plans.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sps

from . import fem
from .fem import AssemblyPlan, SolverError
from .geometry import DeformationMap, LevelSet, unfold
from .linalg import BlockSolver
from .material import (MaterialParameters, pullback_capacity, pullback_conductivity,
                       pullback_coupling, pullback_stiffness, pullback_velocity)
from .mesh import PHASE_B, TaggedMesh, write_vtk
from .problem import Problem, eval_source

log = logging.getLogger(__name__)


@dataclass
class EpsCoefficients:
    """Cellwise transformed coefficients and interface load densities at time ``t``."""

    t: float
    C: np.ndarray
    K: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    c: np.ndarray
    v: np.ndarray
    facet_force: np.ndarray   # (n_facets, dim), curvature load density
    facet_heat: np.ndarray    # (n_facets,), latent-heat load density

    @property
    def has_alpha(self):
        return bool(np.any(self.alpha))

    @property
    def has_gamma(self):
        return bool(np.any(self.gamma))


def _cell_points(mesh: TaggedMesh, eps):
    k, y = unfold(mesh.centroids, eps)
    return eps * k, y


def build_eps_coefficients(t, mesh: TaggedMesh, material: MaterialParameters, smap: DeformationMap,
                           eps: float, level_set: LevelSet | None = None) -> EpsCoefficients:
    """Pullbacks of all material tensors with the phase-B scalings applied."""
    d = mesh.dim
    mat = material.effective()
    xk, y = _cell_points(mesh, eps)
    cf = smap.cell_fields(t, xk, y)
    F = cf.F
    B = mesh.cell_tag == PHASE_B
    A = ~B
    n = mesh.n_cells
    C = np.empty((n, d, d, d, d))
    K = np.empty((n, d, d))
    alpha = np.empty((n, d, d))
    gamma = np.empty((n, d, d))
    c = np.empty(n)
    for sel, Cm, Km, am, gm, cm, s1, s2 in (
            (A, mat.C_A, mat.K_A, mat.alpha_A, mat.gamma_A, mat.c_A, 1.0, 1.0),
            (B, mat.C_B, mat.K_B, mat.alpha_B, mat.gamma_B, mat.c_B, eps, eps ** 2)):
        if not np.any(sel):
            continue
        Fs = F[sel]
        C[sel] = s2 * pullback_stiffness(np.asarray(Cm, float), Fs)
        K[sel] = s2 * pullback_conductivity(np.asarray(Km, float), Fs)
        alpha[sel] = s1 * pullback_coupling(np.asarray(am, float), Fs)
        gamma[sel] = s1 * pullback_coupling(np.asarray(gm, float), Fs)
        c[sel] = pullback_capacity(cm, Fs)
    v = pullback_velocity(eps * cf.v, F)
    nf = len(mesh.interface_facets)
    force = np.zeros((nf, d))
    heat = np.zeros(nf)
    if nf and level_set is not None and not level_set.empty:
        mid = mesh.vertices[mesh.interface_facets].mean(axis=1)
        kf, yf = unfold(mid, eps)
        ff = smap.cell_fields(t, eps * kf, yf, level_set)
        nanson = ff.J[:, None] * np.einsum("fji,fj->fi", ff.Finv, mesh.interface_normals)
        # eps^2 * H_eps with H_eps = H_cell / eps; W_eps = eps * W_cell
        force = eps * ff.H[:, None] * nanson
        heat = -material.L_AB * eps * ff.W * np.linalg.norm(nanson, axis=1)
    return EpsCoefficients(float(t), C, K, alpha, gamma, c, v, force, heat)


# --------------------------------------------------------------------------
# assembler on the free (non-Dirichlet) dofs
# --------------------------------------------------------------------------
class EpsAssembler:
    """Reusable assembly plans for one macro mesh with homogeneous Dirichlet data."""

    def __init__(self, mesh: TaggedMesh):
        self.mesh = mesh
        d = self.dim = mesh.dim
        N = mesh.n_nodes
        bnd = mesh.boundary_nodes
        free = np.ones(N, bool)
        free[bnd] = False
        self.free = np.nonzero(free)[0]
        self.node_index = np.full(N, -1, dtype=np.int64)
        self.node_index[self.free] = np.arange(len(self.free))
        self.n_t = len(self.free)
        self.n_u = self.n_t * d
        tc = self.node_index[mesh.cells]
        uc = np.where(tc[:, :, None] >= 0, tc[:, :, None] * d + np.arange(d), -1).reshape(len(tc), -1)
        self.t_cells, self.u_cells = tc, uc
        self.plan_tt = AssemblyPlan(tc, tc, (self.n_t, self.n_t))
        self.plan_uu = AssemblyPlan(uc, uc, (self.n_u, self.n_u))
        self.plan_tu = AssemblyPlan(tc, uc, (self.n_t, self.n_u))
        self.G = mesh.gradients
        self.vol = mesh.volumes

    # restriction / prolongation between full nodal arrays and free dofs
    def restrict_t(self, full):
        return np.asarray(full)[self.free]

    def restrict_u(self, full):
        return np.asarray(full).reshape(-1, self.dim)[self.free].ravel()

    def extend_t(self, x):
        out = np.zeros(self.mesh.n_nodes)
        out[self.free] = x
        return out

    def extend_u(self, x):
        out = np.zeros((self.mesh.n_nodes, self.dim))
        out[self.free] = x.reshape(-1, self.dim)
        return out

    def lumped(self, w):
        k = self.dim + 1
        full = np.bincount(self.mesh.cells.ravel(), weights=np.repeat(w * self.vol / k, k),
                           minlength=self.mesh.n_nodes)
        return full[self.free]

    def matrices(self, co: EpsCoefficients):
        G, vol = self.G, self.vol
        out = dict(
            K_uu=self.plan_uu.build(fem.local_elasticity(G, vol, co.C)),
            A_K=self.plan_tt.build(fem.local_diffusion(G, vol, co.K)),
            T_c=self.plan_tt.build(fem.local_transport(G, vol, co.c, co.v)),
            m_c=self.lumped(co.c),
            B_alpha=None, D_gamma=None, T_gamma=None,
        )
        if co.has_alpha:
            out["B_alpha"] = self.plan_tu.build(fem.local_div_coupling(G, vol, co.alpha))
        if co.has_gamma:
            out["D_gamma"] = self.plan_tu.build(fem.local_div_coupling(G, vol, co.gamma))
            out["T_gamma"] = self.plan_tu.build(fem.local_transport_coupling(G, vol, co.v, co.gamma))
        return out

    def loads(self, t, co: EpsCoefficients, data, eps):
        """Volume sources (degree-2 quadrature) plus interface loads on free dofs."""
        mesh = self.mesh
        d = self.dim
        Fu = np.zeros(mesh.n_nodes * d)
        Ft = np.zeros(mesh.n_nodes)
        for phase, fu, ft in (("A", data.f_u_A, data.f_theta_A), ("B", data.f_u_B, data.f_theta_B)):
            if fu is None and ft is None:
                continue
            sel = np.nonzero(mesh.phase_mask(phase))[0]
            if len(sel) == 0:
                continue
            if fu is not None:
                Fu += fem.assemble_load(mesh, _unfolded(fu, t, eps, (d,)), cells=sel, ncomp=d)
            if ft is not None:
                Ft += fem.assemble_load(mesh, _unfolded(ft, t, eps, ()), cells=sel)
        if len(mesh.interface_facets):
            if np.any(co.facet_force):
                Fu += fem.assemble_interface_load(mesh, co.facet_force)
            if np.any(co.facet_heat):
                Ft += fem.assemble_interface_load(mesh, co.facet_heat)
        return self.restrict_u(Fu), self.restrict_t(Ft)


def _unfolded(f, t, eps, shape):
    def g(pts):
        k, y = unfold(pts, eps)
        return eval_source(f, t, pts, y, shape)
    return g


# --------------------------------------------------------------------------
# time stepping
# --------------------------------------------------------------------------
@dataclass
class EpsState:
    t: float
    U: np.ndarray        # free dofs
    Theta: np.ndarray    # free dofs
    m_c: np.ndarray      # lumped capacity at t
    D_gamma: sps.csr_matrix | None


@dataclass
class EpsSolution:
    """Stored trajectory; ``U[n]`` is ``(n_nodes, dim)`` and ``Theta[n]`` ``(n_nodes,)``."""

    eps: float
    mesh: TaggedMesh
    times: list = field(default_factory=list)
    U: list = field(default_factory=list)
    Theta: list = field(default_factory=list)
    iterations: dict = field(default_factory=dict)

    def write_vtk(self, path, index=-1):
        write_vtk(self.mesh, path, point_data={"U": self.U[index], "Theta": self.Theta[index],
                                               "phase": node_phase(self.mesh).astype(float)})


def node_phase(mesh: TaggedMesh):
    """1 on nodes strictly inside phase B (not on the interface), else 0."""
    out = np.zeros(mesh.n_nodes, dtype=int)
    inner = np.setdiff1d(mesh.phase_nodes("B"), mesh.interface_nodes)
    out[inner] = 1
    return out


def initial_temperature(mesh: TaggedMesh, data, eps):
    """Two-scale initial temperature: ``theta0_A(x)`` in A, ``theta0_B(x, {x/eps})`` inside B."""
    x = mesh.vertices
    th = np.zeros(mesh.n_nodes)
    if data.theta0_A is not None:
        th = np.broadcast_to(np.asarray(data.theta0_A(x), float), (mesh.n_nodes,)).copy()
    if data.theta0_B is not None:
        inner = node_phase(mesh) == 1
        if np.any(inner):
            _, y = unfold(x[inner], eps)
            th[inner] = np.asarray(data.theta0_B(x[inner], y), float)
    return th


class EpsSolver:
    """Implicit Euler integrator for the eps-problem on a fixed macro mesh."""

    def __init__(self, problem: Problem, mesh: TaggedMesh, eps: float, tol: float = 1e-10):
        self.problem = problem
        self.mesh = mesh
        self.eps = float(eps)
        self.tol = tol
        self.asm = EpsAssembler(mesh)
        self.blocks = BlockSolver(self.asm.n_u, tol, dim=mesh.dim)
        self.level_set = problem.level_set()

    def coefficients(self, t):
        p = self.problem
        return build_eps_coefficients(t, self.mesh, p.material, p.smap, self.eps, self.level_set)

    def initial_state(self) -> EpsState:
        asm = self.asm
        th = asm.restrict_t(initial_temperature(self.mesh, self.problem.data, self.eps))
        co = self.coefficients(0.0)
        m = asm.matrices(co)
        return EpsState(0.0, np.zeros(asm.n_u), th, m["m_c"], m["D_gamma"])

    def step(self, state: EpsState, dt: float) -> EpsState:
        """One implicit Euler step from ``state.t`` to ``state.t + dt``."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        t = state.t + dt
        asm = self.asm
        co = self.coefficients(t)
        m = asm.matrices(co)
        Fu, Ft = asm.loads(t, co, self.problem.data, self.eps)
        rhs_t = Ft + state.m_c * state.Theta / dt
        if state.D_gamma is not None:
            rhs_t = rhs_t + state.D_gamma @ state.U / dt
        H = (sps.diags(m["m_c"] / dt) + m["A_K"] + m["T_c"]).tocsr()
        Hsym = (sps.diags(m["m_c"] / dt) + m["A_K"]).tocsr()
        L = None
        if m["D_gamma"] is not None:
            L = (m["D_gamma"] / dt + m["T_gamma"]).tocsr()
        U, Th = self.blocks.solve(m["K_uu"], m["B_alpha"], L, H, Hsym, Fu, rhs_t, state.U, state.Theta)
        return EpsState(t, U, Th, m["m_c"], m["D_gamma"])

    def full_fields(self, state: EpsState):
        return self.asm.extend_u(state.U), self.asm.extend_t(state.Theta)


Observer = Callable[[int, float, np.ndarray, np.ndarray], None]


def solve_eps(problem: Problem, mesh: TaggedMesh, eps: float, observer: Observer | None = None,
              store: bool = True, stride: int = 1, tol: float = 1e-10) -> EpsSolution:
    """Integrate over ``[0, T]``; ``observer(n, t, U, Theta)`` sees every step (full nodal arrays)."""
    solver = EpsSolver(problem, mesh, eps, tol)
    sol = EpsSolution(float(eps), mesh)
    state = solver.initial_state()

    def emit(n, st):
        U, Th = solver.full_fields(st)
        if observer is not None:
            observer(n, st.t, U, Th)
        if store and n % stride == 0:
            sol.times.append(st.t)
            sol.U.append(U)
            sol.Theta.append(Th)

    emit(0, state)
    dt = problem.dt
    n_steps = problem.n_steps if problem.T > 0 else 0
    for n in range(1, n_steps + 1):
        try:
            state = solver.step(state, dt)
        except SolverError as exc:
            raise SolverError(f"eps={eps}: step {n} failed: {exc}", exc.residual) from exc
        emit(n, state)
    sol.iterations = solver.blocks.iterations()
    return sol
