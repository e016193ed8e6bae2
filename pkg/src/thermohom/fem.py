"""P1 finite element assembly, boundary conditions and linear solves.

Coefficients are taken elementwise constant (evaluated at centroids when
given as callables).  Vector unknowns are stored node-major, ``dof = node *
ncomp + component``.  Local element matrices are scattered into CSR through
an :class:`AssemblyPlan` that can be reused across time steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .mesh import TaggedMesh


class SolverError(RuntimeError):
    """Linear solve failed; ``residual`` holds the achieved relative residual if known."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


# --------------------------------------------------------------------------
# data containers
# --------------------------------------------------------------------------
@dataclass
class SparseSystem:
    matrix: sps.csr_matrix
    rhs: np.ndarray
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n(self):
        return self.matrix.shape[0]


@dataclass
class FieldFunction:
    """Nodal P1 field (scalar or ``ncomp`` components per node)."""

    mesh: TaggedMesh
    values: np.ndarray
    phase: str | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[0] != self.mesh.n_nodes:
            raise ValueError("field length does not match the node count")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains NaN or inf")
        self.values = v

    def gradient(self) -> np.ndarray:
        """Elementwise gradients, shape ``(n_cells, [ncomp,] dim)``."""
        return cell_gradient(self.mesh, self.values)


def cell_gradient(mesh: TaggedMesh, values, cells=None):
    G = mesh.gradients if cells is None else mesh.gradients[cells]
    c = mesh.cells if cells is None else mesh.cells[cells]
    v = np.asarray(values)[c]
    if v.ndim == 2:
        return np.einsum("ea,eak->ek", v, G)
    return np.einsum("eac,eak->eck", v, G)


# --------------------------------------------------------------------------
# coefficient handling
# --------------------------------------------------------------------------
def _selection(mesh, phase, cells=None):
    if cells is not None:
        return np.asarray(cells)
    return np.nonzero(mesh.phase_mask(phase))[0]


def cell_values(mesh: TaggedMesh, coeff, sel, shape=()):
    """Per-cell coefficient array for the selected cells.

    ``coeff`` may be a constant of ``shape``, an array over all cells, an
    array over the selection, or a callable of centroid coordinates.
    """
    if callable(coeff):
        arr = np.asarray(coeff(mesh.centroids[sel]), dtype=float)
    else:
        arr = np.asarray(coeff, dtype=float)
    if arr.shape == tuple(shape):
        return np.broadcast_to(arr, (len(sel),) + tuple(shape))
    if arr.shape[0] == len(sel) and arr.shape[1:] == tuple(shape):
        return arr
    if arr.shape[0] == mesh.n_cells and arr.shape[1:] == tuple(shape):
        return arr[sel]
    raise ValueError(f"coefficient of shape {arr.shape} does not fit {len(sel)} cells x {shape}")


# --------------------------------------------------------------------------
# assembly plan
# --------------------------------------------------------------------------
class AssemblyPlan:
    """Precomputed COO -> CSR scatter for a fixed set of local dof maps.

    Negative dof numbers mark eliminated (Dirichlet) dofs; their entries are
    dropped, which yields the reduced system directly.
    """

    def __init__(self, row_dofs, col_dofs, shape):
        row_dofs = np.asarray(row_dofs, dtype=np.int64)
        col_dofs = np.asarray(col_dofs, dtype=np.int64)
        a, b = row_dofs.shape[1], col_dofs.shape[1]
        r = np.repeat(row_dofs, b, axis=1).ravel()
        c = np.tile(col_dofs, (1, a)).ravel()
        valid = (r >= 0) & (c >= 0)
        sentinel = np.int64(shape[0]) * shape[1]
        keys = np.where(valid, r * shape[1] + c, sentinel)
        uniq, inv = np.unique(keys, return_inverse=True)
        if not np.all(valid):
            uniq = uniq[:-1]
        self.inv = inv.ravel()
        self.nnz = len(uniq)
        self.shape = tuple(shape)
        rows = uniq // shape[1]
        self.indices = (uniq % shape[1]).astype(np.int32 if shape[1] < 2**31 else np.int64)
        self.indptr = np.zeros(shape[0] + 1, dtype=self.indices.dtype)
        np.cumsum(np.bincount(rows, minlength=shape[0]), out=self.indptr[1:])
        self.local_shape = (len(row_dofs), a, b)

    def build(self, local) -> sps.csr_matrix:
        data = np.bincount(self.inv, weights=np.asarray(local).reshape(-1), minlength=self.nnz + 1)[: self.nnz]
        return sps.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)

    def build_block_diag(self, local) -> sps.csr_matrix:
        """Block-diagonal matrix from a batch ``(m, n_cells, a, b)`` of local arrays."""
        local = np.asarray(local)
        m = local.shape[0]
        n1 = self.nnz + 1
        idx = (self.inv[None, :] + n1 * np.arange(m)[:, None]).ravel()
        data = np.bincount(idx, weights=local.reshape(-1), minlength=m * n1).reshape(m, n1)[:, : self.nnz]
        r, c = self.shape
        indices = (self.indices[None, :].astype(np.int64) + c * np.arange(m)[:, None]).ravel()
        indptr = np.append((self.indptr[:-1][None, :].astype(np.int64)
                            + self.nnz * np.arange(m)[:, None]).ravel(), m * self.nnz)
        return sps.csr_matrix((data.ravel(), indices, indptr), shape=(m * r, m * c))


def vector_dofs(cells, ncomp):
    """Node-major vector dofs of each cell: ``(n_cells, (d+1)*ncomp)``."""
    return (cells[:, :, None] * ncomp + np.arange(ncomp)).reshape(len(cells), -1)


# --------------------------------------------------------------------------
# local element matrices (vectorised over cells)
# --------------------------------------------------------------------------
def local_diffusion(G, vol, K):
    return vol[:, None, None] * (G @ K @ np.swapaxes(G, 1, 2))


def local_elasticity(G, vol, C):
    """Blocks ``[a, c, b, d] = vol * C[c, j, d, l] g_a[j] g_b[l]`` (minor symmetric C)."""
    m, k, d = G.shape
    # full-gradient operator: rows (c, j), columns (a, c)
    B = np.zeros((m, d * d, k * d))
    for c in range(d):
        B[:, c * d:(c + 1) * d, c::d] = np.swapaxes(G, 1, 2)
    Cm = np.asarray(C).reshape(m, d * d, d * d)
    return vol[:, None, None] * (np.swapaxes(B, 1, 2) @ (Cm @ B))


def local_mass(vol, w, k, lumped=False):
    if lumped:
        return (w * vol / k)[:, None, None] * np.eye(k)
    base = (np.ones((k, k)) + np.eye(k)) / (k * (k + 1))
    return (w * vol)[:, None, None] * base


def local_div_coupling(G, vol, gamma):
    """Scalar rows, vector columns: ``int (gamma : grad phi_{b,c}) phi_a``."""
    m, k, d = G.shape
    gc = np.einsum("eck,ebk->ebc", gamma, G)  # gamma : grad of (node b, comp c)
    loc = (vol / k)[:, None, None] * np.broadcast_to(gc.reshape(m, 1, k * d), (m, k, k * d))
    return loc


def local_transport(G, vol, w, v):
    """``int w phi_b v . grad phi_a`` (rows a, cols b)."""
    k = G.shape[1]
    vg = np.einsum("ek,eak->ea", v, G)
    return (w * vol / k)[:, None, None] * np.broadcast_to(vg[:, :, None], (len(vol), k, k))


def local_transport_coupling(G, vol, v, gamma):
    """``int (gamma : grad U) v . grad phi_a`` with U = phi_{b,c}."""
    m, k, d = G.shape
    vg = np.einsum("ek,eak->ea", v, G)
    gc = np.einsum("eck,ebk->ebc", gamma, G).reshape(m, k * d)
    return vol[:, None, None] * vg[:, :, None] * gc[:, None, :]


# --------------------------------------------------------------------------
# public assembly routines
# --------------------------------------------------------------------------
def _check_spd(K, tol=1e-12):
    if len(K) == 0:
        return
    Ks = 0.5 * (K + np.swapaxes(K, -1, -2))
    if np.max(np.abs(K - Ks)) > 1e-10 * max(1.0, np.max(np.abs(K))):
        raise ValueError("conductivity is not symmetric")
    lam = np.linalg.eigvalsh(Ks)
    if np.any(lam < -tol * max(1.0, np.max(np.abs(lam)))):
        raise ValueError("conductivity has a negative eigenvalue")


def check_stiffness_symmetry(C, tol=1e-10):
    C = np.asarray(C)
    scale = max(1.0, float(np.max(np.abs(C), initial=0.0)))
    for perm in ((1, 0, 2, 3), (0, 1, 3, 2), (2, 3, 0, 1)):
        axes = tuple(range(C.ndim - 4)) + tuple(C.ndim - 4 + p for p in perm)
        if np.max(np.abs(C - np.transpose(C, axes)), initial=0.0) > tol * scale:
            raise ValueError("stiffness tensor lacks minor/major symmetry")


def assemble_diffusion(mesh: TaggedMesh, K, phase=None, cells=None) -> sps.csr_matrix:
    """Stiffness ``int K grad phi_j . grad phi_i`` over the cells of ``phase``."""
    sel = _selection(mesh, phase, cells)
    d = mesh.dim
    Kc = cell_values(mesh, K, sel, (d, d))
    _check_spd(Kc)
    loc = local_diffusion(mesh.gradients[sel], mesh.volumes[sel], Kc)
    c = mesh.cells[sel]
    return AssemblyPlan(c, c, (mesh.n_nodes,) * 2).build(loc)


def assemble_elasticity(mesh: TaggedMesh, C, phase=None, cells=None) -> sps.csr_matrix:
    """``int C e(phi_j) : e(phi_i)`` on node-major vector dofs."""
    sel = _selection(mesh, phase, cells)
    d = mesh.dim
    Cc = cell_values(mesh, C, sel, (d,) * 4)
    check_stiffness_symmetry(Cc)
    loc = local_elasticity(mesh.gradients[sel], mesh.volumes[sel], Cc)
    dofs = vector_dofs(mesh.cells[sel], d)
    return AssemblyPlan(dofs, dofs, (mesh.n_nodes * d,) * 2).build(loc)


def assemble_mass(mesh: TaggedMesh, weight=1.0, phase=None, cells=None, lumped=False) -> sps.csr_matrix:
    sel = _selection(mesh, phase, cells)
    w = cell_values(mesh, weight, sel)
    loc = local_mass(mesh.volumes[sel], w, mesh.dim + 1, lumped)
    c = mesh.cells[sel]
    return AssemblyPlan(c, c, (mesh.n_nodes,) * 2).build(loc)


def assemble_div_coupling(mesh: TaggedMesh, gamma, phase=None, cells=None) -> sps.csr_matrix:
    """Rectangular ``(n_nodes, n_nodes*dim)`` matrix of ``int (gamma : grad U) phi_i``."""
    sel = _selection(mesh, phase, cells)
    d = mesh.dim
    g = cell_values(mesh, gamma, sel, (d, d))
    loc = local_div_coupling(mesh.gradients[sel], mesh.volumes[sel], g)
    c = mesh.cells[sel]
    return AssemblyPlan(c, vector_dofs(c, d), (mesh.n_nodes, mesh.n_nodes * d)).build(loc)


def assemble_transport(mesh: TaggedMesh, v, weight=1.0, phase=None, cells=None, gamma=None):
    """Weak transport ``int (w Theta + gamma : grad U) v . grad phi_i``.

    Returns the scalar block (Theta columns); with ``gamma`` also the
    rectangular block acting on the displacement dofs.
    """
    sel = _selection(mesh, phase, cells)
    d = mesh.dim
    vc = cell_values(mesh, v, sel, (d,))
    w = cell_values(mesh, weight, sel)
    G, vol, c = mesh.gradients[sel], mesh.volumes[sel], mesh.cells[sel]
    A = AssemblyPlan(c, c, (mesh.n_nodes,) * 2).build(local_transport(G, vol, w, vc))
    if gamma is None:
        return A
    g = cell_values(mesh, gamma, sel, (d, d))
    B = AssemblyPlan(c, vector_dofs(c, d), (mesh.n_nodes, mesh.n_nodes * d)).build(
        local_transport_coupling(G, vol, vc, g))
    return A, B


def assemble_interface_load(mesh: TaggedMesh, density, facets=None, vertices=None) -> np.ndarray:
    """``int density phi_i ds`` over interface facets (midpoint rule).

    ``density`` is one value (or vector) per facet; vector densities give a
    node-major vector right-hand side.
    """
    f = mesh.interface_facets if facets is None else facets
    verts = mesh.vertices if vertices is None else vertices
    from .mesh import _facet_measure

    meas = _facet_measure(verts[f]) if len(f) else np.zeros(0)
    dens = np.asarray(density, dtype=float)
    k = f.shape[1] if len(f) else mesh.dim
    if dens.ndim <= 1:
        dens = np.broadcast_to(dens, (len(f),))
        return np.bincount(f.ravel(), weights=np.repeat(dens * meas / k, k), minlength=mesh.n_nodes)
    ncomp = dens.shape[1]
    out = np.zeros((mesh.n_nodes, ncomp))
    for c in range(ncomp):
        out[:, c] = np.bincount(f.ravel(), weights=np.repeat(dens[:, c] * meas / k, k), minlength=mesh.n_nodes)
    return out.ravel()


# degree-2 quadrature on the reference simplex (barycentric points, weights sum to 1)
_QUAD2 = {
    2: (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]), np.full(3, 1 / 3)),
    3: (np.full((4, 4), 0.1381966011250105) + np.eye(4) * (0.5854101966249685 - 0.1381966011250105),
        np.full(4, 0.25)),
}
# degree-5 rule for triangles (7 points) used by oracle-grade integrals
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_QUAD5_TRI = (
    np.array([[1 / 3, 1 / 3, 1 / 3], [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
              [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2]]),
    np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3),
)


def quadrature(dim, degree=2):
    if degree <= 2 or dim == 3:
        return _QUAD2[dim]
    return _QUAD5_TRI


def quadrature_points(mesh: TaggedMesh, sel=None, degree=2):
    """Physical quadrature points ``(n_sel, q, dim)``, barycentrics and weights."""
    bary, w = quadrature(mesh.dim, degree)
    c = mesh.cells if sel is None else mesh.cells[sel]
    pts = np.einsum("qa,ead->eqd", bary, mesh.vertices[c])
    return pts, bary, w


def assemble_load(mesh: TaggedMesh, f, phase=None, cells=None, ncomp=1, degree=2) -> np.ndarray:
    """``int f phi_i`` with ``f`` a callable of points (values ``(..., ncomp)`` if vector)."""
    sel = _selection(mesh, phase, cells)
    pts, bary, w = quadrature_points(mesh, sel, degree)
    vals = np.asarray(f(pts), dtype=float)
    vol = mesh.volumes[sel]
    c = mesh.cells[sel]
    if ncomp == 1:
        vals = np.broadcast_to(vals, pts.shape[:2])
        loc = np.einsum("eq,q,qa,e->ea", vals, w, bary, vol)
        return np.bincount(c.ravel(), weights=loc.ravel(), minlength=mesh.n_nodes)
    vals = np.broadcast_to(vals, pts.shape[:2] + (ncomp,))
    loc = np.einsum("eqc,q,qa,e->eac", vals, w, bary, vol)
    return np.bincount(vector_dofs(c, ncomp).ravel(), weights=loc.ravel(), minlength=mesh.n_nodes * ncomp)


# --------------------------------------------------------------------------
# boundary conditions and solves
# --------------------------------------------------------------------------
def apply_dirichlet(A, b, dofs, values=0.0):
    """Symmetric elimination: constrained rows and columns become identity.

    Returns a new ``SparseSystem``; the original matrix is not modified.
    """
    A = sps.csr_matrix(A)
    b = np.array(b, dtype=float)
    dofs = np.unique(np.asarray(dofs, dtype=np.int64))
    g = np.zeros(A.shape[0])
    g[dofs] = values
    b = b - A @ g
    keep = np.ones(A.shape[0])
    keep[dofs] = 0.0
    D = sps.diags(keep)
    A = (D @ A @ D).tocsr()
    A = A + sps.diags(1.0 - keep)
    b[dofs] = g[dofs]
    return SparseSystem(A.tocsr(), b, dofs)


def solve(system, rhs=None, tol=1e-10, method="auto") -> np.ndarray:
    """Solve ``A x = b``; raises :class:`SolverError` when the residual is above ``tol``."""
    if isinstance(system, SparseSystem):
        A, b = system.matrix, system.rhs
    else:
        A, b = system, rhs
    A = sps.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise SolverError("matrix is not square")
    if method == "auto":
        method = "direct" if A.shape[0] <= 200_000 else "cg"
    with np.errstate(all="ignore"):
        if method == "direct":
            try:
                x = spla.splu(A).solve(b)
            except RuntimeError as exc:
                raise SolverError(f"factorization failed: {exc}") from exc
        elif method == "cg":
            x, info = spla.cg(A, b, rtol=tol, maxiter=10 * A.shape[0], M=_amg_preconditioner(A))
            if info != 0:
                raise SolverError("CG did not converge", _relres(A, x, b))
        else:
            raise ValueError(f"unknown method {method!r}")
    res = _relres(A, x, b)
    if not np.isfinite(res) or res > max(tol, 1e-8) * 10:
        raise SolverError(f"solve failed with relative residual {res:.3e}", res)
    return x


def _relres(A, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / nb if nb > 0 else r


def _amg_preconditioner(A, B=None):
    import pyamg

    ml = pyamg.smoothed_aggregation_solver(sps.csr_matrix(A), B=B)
    return ml.aspreconditioner(cycle="V")


class LinearSolver:
    """Reusable solver for a sequence of systems with a fixed sparsity pattern.

    Small systems are factorized directly each call; large ones use
    AMG-preconditioned Krylov iterations with a hierarchy built once and
    rebuilt when the iteration count degrades.
    """

    def __init__(self, symmetric=True, direct_limit=60_000, tol=1e-10, near_null=None, rebuild_iters=60):
        self.symmetric = symmetric
        self.direct_limit = direct_limit
        self.tol = tol
        self.near_null = near_null
        self.rebuild_iters = rebuild_iters
        self._M = None
        self.last_iterations = 0

    def __call__(self, A, b, x0=None):
        A = sps.csr_matrix(A)
        if A.shape[0] <= self.direct_limit:
            try:
                return spla.splu(sps.csc_matrix(A)).solve(np.asarray(b, dtype=float))
            except RuntimeError as exc:
                raise SolverError(f"factorization failed: {exc}") from exc
        if self._M is None:
            self._M = _amg_preconditioner(A, self.near_null)
        x, its = self._krylov(A, b, x0)
        if its > self.rebuild_iters:
            self._M = _amg_preconditioner(A, self.near_null)
        return x

    def _krylov(self, A, b, x0):
        count = [0]

        def cb(_):
            count[0] += 1

        nb = np.linalg.norm(b)
        if nb == 0:
            return np.zeros_like(b), 0
        if self.symmetric:
            x, info = spla.cg(A, b, x0=x0, rtol=self.tol, maxiter=2000, M=self._M, callback=cb)
        else:
            x, info = spla.gmres(A, b, x0=x0, rtol=self.tol, restart=60, maxiter=40, M=self._M,
                                 callback=cb, callback_type="pr_norm")
        self.last_iterations = count[0]
        if info != 0:
            res = _relres(A, x, b)
            if res > 100 * self.tol:
                raise SolverError(f"iterative solve did not converge (residual {res:.2e})", res)
        return x, count[0]


# --------------------------------------------------------------------------
# point location
# --------------------------------------------------------------------------
def interpolation_matrix(mesh: TaggedMesh, points, tol=1e-9, k=8) -> sps.csr_matrix:
    """Sparse ``(n_points, n_nodes)`` matrix of P1 barycentric interpolation.

    Candidate cells come from a k-d tree over centroids; points outside the
    mesh raise ``ValueError``.
    """
    from scipy.spatial import cKDTree

    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = mesh.dim
    tree = cKDTree(mesh.centroids)
    k = min(k, mesh.n_cells)
    found = np.full(len(pts), -1)
    bary = np.zeros((len(pts), d + 1))
    todo = np.arange(len(pts))
    while len(todo):
        _, cand = tree.query(pts[todo], k=k)
        cand = np.atleast_2d(cand).reshape(len(todo), -1)
        for col in range(cand.shape[1]):
            c = cand[:, col]
            v = mesh.vertices[mesh.cells[c]]  # (m, d+1, d)
            T = np.swapaxes(v[:, 1:] - v[:, :1], 1, 2)
            lam = np.linalg.solve(T, (pts[todo] - v[:, 0])[..., None])[..., 0]
            b = np.concatenate([1 - lam.sum(1, keepdims=True), lam], axis=1)
            ok = (found[todo] < 0) & np.all(b >= -tol, axis=1)
            found[todo[ok]] = c[ok]
            bary[todo[ok]] = b[ok]
        todo = todo[found[todo] < 0]
        if len(todo) == 0:
            break
        if k >= mesh.n_cells:
            raise ValueError(f"{len(todo)} points lie outside the mesh")
        k = min(4 * k, mesh.n_cells)
    # drop round-off weights so points on a facet only see the facet's vertices
    bary = np.where(bary < 1e-12, 0.0, bary)
    bary /= bary.sum(1, keepdims=True)
    rows = np.repeat(np.arange(len(pts)), d + 1)
    return sps.csr_matrix((bary.ravel(), (rows, mesh.cells[found].ravel())), shape=(len(pts), mesh.n_nodes))
