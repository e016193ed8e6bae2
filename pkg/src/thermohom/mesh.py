"""Interface-conforming simplicial meshes of the unit cell and of the macro domain.

The cell mesh is a structured grid split into simplices (union-jack pattern
in 2D, Kuhn split in 3D) whose vertices next to the interface are snapped
onto the level set.  The macro mesh tiles this template over the eps-cells of
the domain so that every macro node sits at a known template node.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .geometry import CellGeometry

PHASE_A = 0
PHASE_B = 1
_PHASE_NAMES = {"A": PHASE_A, "B": PHASE_B}


class MeshError(ValueError):
    pass


def phase_id(phase) -> int | None:
    """Normalise a phase label ('A', 'B', 0, 1 or None/'all')."""
    if phase is None or phase == "all":
        return None
    if isinstance(phase, str):
        return _PHASE_NAMES[phase.upper()]
    return int(phase)


@dataclass(eq=False)
class TaggedMesh:
    """Simplicial mesh with phase tags and interface/boundary facets.

    ``interface_cells[f] = (a, b)`` lists the A-cell and the B-cell sharing
    interface facet ``f``; ``interface_normals`` point from B into A.  Macro
    meshes built by :func:`generate_macro_mesh` also carry ``node_template``
    (template node of every vertex), ``node_cell`` (integer eps-cell index)
    and ``eps``.
    """

    vertices: np.ndarray
    cells: np.ndarray
    cell_tag: np.ndarray
    interface_facets: np.ndarray
    interface_normals: np.ndarray
    interface_cells: np.ndarray
    boundary_facets: np.ndarray
    node_template: np.ndarray | None = None
    node_cell: np.ndarray | None = None
    eps: float | None = None
    template: "PeriodicCellMesh | None" = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def signed_volumes(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d = p[:, 1:] - p[:, :1]
        return np.linalg.det(d) / (1 if self.dim == 1 else (2 if self.dim == 2 else 6))

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.abs(self.signed_volumes)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @cached_property
    def h(self) -> float:
        """Largest circumdiameter."""
        p = self.vertices[self.cells]
        if self.dim == 2:
            a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
            b = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
            c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
            return float(np.max(a * b * c / (2 * self.volumes)))
        # circumcentre from the linear system 2 (p_i - p_0) . z = |p_i|^2 - |p_0|^2
        A = 2 * (p[:, 1:] - p[:, :1])
        rhs = np.sum(p[:, 1:] ** 2, axis=2) - np.sum(p[:, :1] ** 2, axis=2)
        z = np.linalg.solve(A, rhs[..., None])[..., 0]
        return float(2 * np.max(np.linalg.norm(z - p[:, 0], axis=1)))

    def phase_mask(self, phase) -> np.ndarray:
        pid = phase_id(phase)
        if pid is None:
            return np.ones(self.n_cells, dtype=bool)
        return self.cell_tag == pid

    def phase_volume(self, phase) -> float:
        return float(self.volumes[self.phase_mask(phase)].sum())

    def phase_nodes(self, phase) -> np.ndarray:
        """Sorted node indices touched by cells of ``phase``."""
        return np.unique(self.cells[self.phase_mask(phase)])

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_facets)

    @cached_property
    def interface_nodes(self) -> np.ndarray:
        return np.unique(self.interface_facets)

    @cached_property
    def facet_measures(self) -> np.ndarray:
        return _facet_measure(self.vertices[self.interface_facets])

    @cached_property
    def gradients(self) -> np.ndarray:
        """Gradients of the P1 hat functions, shape ``(n_cells, dim+1, dim)``."""
        p = self.vertices[self.cells]
        D = p[:, 1:] - p[:, :1]
        Dinv = np.linalg.inv(D)  # columns: gradients of barycentrics 1..dim
        g = np.empty((self.n_cells, self.dim + 1, self.dim))
        g[:, 1:] = np.swapaxes(Dinv, 1, 2)
        g[:, 0] = -g[:, 1:].sum(axis=1)
        return g

    def check(self):
        """Raise if a structural invariant is violated."""
        if np.any(self.signed_volumes <= 0):
            raise MeshError("inverted or degenerate simplices")
        if len(self.interface_cells):
            tags = self.cell_tag[self.interface_cells]
            if not (np.all(tags[:, 0] == PHASE_A) and np.all(tags[:, 1] == PHASE_B)):
                raise MeshError("interface facet does not separate A from B")
            fc = self.vertices[self.interface_facets].mean(axis=1)
            out = np.einsum("ij,ij->i", fc - self.centroids[self.interface_cells[:, 1]], self.interface_normals)
            if np.any(out <= 0):
                raise MeshError("interface normal does not point out of B")


@dataclass(eq=False)
class PeriodicCellMesh:
    """Mesh of the unit cell with identification of opposite boundary nodes."""

    base: TaggedMesh
    periodic_pairs: np.ndarray  # (P, 2): vertices[b] = vertices[a] + e_k
    n_per_side: int | None = None

    @cached_property
    def master(self) -> np.ndarray:
        """Representative node of every periodic equivalence class (smallest index)."""
        n = self.base.n_nodes
        if len(self.periodic_pairs) == 0:
            return np.arange(n)
        a, b = self.periodic_pairs.T
        g = coo_matrix((np.ones(len(a)), (a, b)), shape=(n, n))
        _, labels = connected_components(g, directed=False)
        rep = np.full(labels.max() + 1, n)
        np.minimum.at(rep, labels, np.arange(n))
        return rep[labels]

    @cached_property
    def free_nodes(self) -> np.ndarray:
        """Sorted representatives; the periodic unknowns live here."""
        return np.unique(self.master)

    def phase_connected(self, phase="A") -> bool:
        """True if the cells of ``phase`` form one facet-connected (periodic) component."""
        m = self.base
        mask = m.phase_mask(phase)
        cells = self.master[m.cells[mask]]
        if len(cells) == 0:
            return False
        return _facet_components(cells) == 1

    @property
    def dim(self):
        return self.base.dim

    @property
    def h(self):
        return self.base.h


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------
def _facet_measure(p):
    d = p.shape[-1]
    if d == 2:
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def _facet_normal(p):
    d = p.shape[-1]
    if d == 2:
        e = p[:, 1] - p[:, 0]
        n = np.stack([e[:, 1], -e[:, 0]], axis=1)
    else:
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def _cell_facets(cells):
    """All facets of all simplices: (n_cells*(d+1), d) sorted node lists and owner cell ids."""
    k = cells.shape[1]
    faces = [np.delete(cells, i, axis=1) for i in range(k)]
    f = np.sort(np.concatenate(faces), axis=1)
    owner = np.tile(np.arange(len(cells)), k)
    return f, owner


def _facet_components(cells):
    f, owner = _cell_facets(cells)
    _, inv, counts = np.unique(f, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    sinv = inv[order]
    same = sinv[1:] == sinv[:-1]
    a = owner[order][:-1][same]
    b = owner[order][1:][same]
    n = len(cells)
    g = coo_matrix((np.ones(len(a)), (a, b)), shape=(n, n))
    nc, _ = connected_components(g, directed=False)
    return nc


def _classify_facets(vertices, cells, tags, on_boundary):
    """Interface facets (A|B, normals out of B) and boundary facets."""
    f, owner = _cell_facets(cells)
    uniq, inv, counts = np.unique(f, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    sinv = inv[order]
    # interior facets appear twice in consecutive positions
    pair = np.nonzero(sinv[1:] == sinv[:-1])[0]
    c0 = owner[order][pair]
    c1 = owner[order][pair + 1]
    fid = sinv[pair]
    differ = tags[c0] != tags[c1]
    c0, c1, fid = c0[differ], c1[differ], fid[differ]
    a_cell = np.where(tags[c0] == PHASE_A, c0, c1)
    b_cell = np.where(tags[c0] == PHASE_A, c1, c0)
    ifacets = uniq[fid]
    p = vertices[ifacets]
    normals = _facet_normal(p)
    cb = vertices[cells[b_cell]].mean(axis=1)
    flip = np.einsum("ij,ij->i", p.mean(axis=1) - cb, normals) < 0
    normals[flip] *= -1
    single = uniq[counts == 1]
    bf = single[np.all(on_boundary[single], axis=1)]
    return ifacets, normals, np.stack([a_cell, b_cell], axis=1).reshape(-1, 2), bf


def _periodic_pairs(vertices, tol=1e-12):
    """Pairs (a, b) with vertices[b] = vertices[a] + e_k for unit-cell meshes."""
    d = vertices.shape[1]
    pairs = []
    scale = 1.0 / tol
    for k in range(d):
        lo = np.nonzero(np.abs(vertices[:, k]) < tol)[0]
        hi = np.nonzero(np.abs(vertices[:, k] - 1.0) < tol)[0]
        others = [j for j in range(d) if j != k]
        key = lambda idx: [tuple(r) for r in np.rint(vertices[idx][:, others] * scale).astype(np.int64)]
        table = dict(zip(key(hi), hi))
        for a, kk in zip(lo, key(lo)):
            if kk not in table:
                raise MeshError("boundary nodes are not periodic")
            pairs.append((a, table[kk]))
    if len(pairs) and (len(pairs) != len({p for p in pairs})):
        raise MeshError("duplicate periodic pair")
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


# --------------------------------------------------------------------------
# structured templates
# --------------------------------------------------------------------------
def _grid_2d(n):
    """Union-jack triangulation of the (n x n) grid on the unit square.

    Square (i, j) gets the diagonal through the cell centre direction so the
    pattern is invariant under the symmetries of the square.
    """
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)  # idx[i, j] for x = i/n, y = j/n
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.ravel(), j.ravel()
    v00, v10, v01, v11 = idx[i, j], idx[i + 1, j], idx[i, j + 1], idx[i + 1, j + 1]
    slash = (2 * i + 1 - n) * (2 * j + 1 - n) > 0
    t1 = np.where(slash[:, None], np.stack([v00, v10, v11], 1), np.stack([v00, v10, v01], 1))
    t2 = np.where(slash[:, None], np.stack([v00, v11, v01], 1), np.stack([v10, v11, v01], 1))
    cells = np.empty((2 * len(i), 3), dtype=np.int64)
    cells[0::2], cells[1::2] = t1, t2
    lattice = np.stack(np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij"), -1).reshape(-1, 2)
    return lattice, cells


_KUHN = [p for p in itertools.permutations(range(3))]


def _grid_3d(n):
    """Kuhn split of each cube of the (n x n x n) grid into six tetrahedra."""
    m = n + 1
    idx = np.arange(m**3).reshape(m, m, m)
    ijk = np.stack(np.meshgrid(*[np.arange(n)] * 3, indexing="ij"), -1).reshape(-1, 3)
    cells = []
    for perm in _KUHN:
        path = [ijk.copy()]
        cur = ijk.copy()
        for ax in perm:
            cur = cur.copy()
            cur[:, ax] += 1
            path.append(cur)
        cells.append(np.stack([idx[p[:, 0], p[:, 1], p[:, 2]] for p in path], axis=1))
    cells = np.stack(cells, axis=1).reshape(-1, 4)
    lattice = np.stack(np.meshgrid(*[np.arange(m)] * 3, indexing="ij"), -1).reshape(-1, 3)
    return lattice, cells


def _orient(vertices, cells):
    p = vertices[cells]
    vol = np.linalg.det(p[:, 1:] - p[:, :1])
    cells = cells.copy()
    neg = vol < 0
    cells[neg, 0], cells[neg, 1] = cells[neg, 1].copy(), cells[neg, 0].copy()
    return cells


def _snap(vertices, cells, level_set, on_boundary):
    """Move vertices next to the interface onto it.

    Rounds of simultaneous snapping: every edge whose endpoints have strictly
    opposite signs snaps the endpoint closer to the linear-interpolation
    crossing (ties go to the inside endpoint).  Snapped nodes count as sign 0.
    """
    v = vertices.copy()
    phi = level_set(v)
    sign = np.sign(phi).astype(np.int8)
    k = cells.shape[1]
    edges = np.unique(np.sort(np.concatenate([cells[:, [a, b]] for a, b in
                                              itertools.combinations(range(k), 2)]), axis=1), axis=0)
    snapped = np.zeros(len(v), dtype=bool)
    for _ in range(64):
        a, b = edges.T
        cut = sign[a] * sign[b] < 0
        if not np.any(cut):
            break
        a, b = a[cut], b[cut]
        lam = phi[a] / (phi[a] - phi[b])
        tie = np.abs(lam - 0.5) <= 1e-9
        pick = np.where(tie, np.where(phi[a] < 0, a, b), np.where(lam < 0.5, a, b))
        pick = np.unique(pick)
        if np.any(on_boundary[pick]):
            raise MeshError("inclusion touches the cell boundary")
        v[pick] = level_set.project(v[pick])
        phi[pick] = 0.0
        sign[pick] = 0
        snapped[pick] = True
    return v, snapped


def _template(geometry: CellGeometry, n: int):
    if geometry.dim == 2:
        lattice, cells = _grid_2d(n)
    else:
        lattice, cells = _grid_3d(n)
    vertices = lattice / n
    on_boundary = np.any((lattice == 0) | (lattice == n), axis=1)
    ls = geometry.inclusion
    if not ls.empty:
        if np.any(ls(vertices[on_boundary]) <= 0):
            raise MeshError("inclusion intersects the cell boundary")
        vertices, _ = _snap(vertices, cells, ls, on_boundary)
    cells = _orient(vertices, cells)
    if ls.empty:
        tags = np.zeros(len(cells), dtype=np.int8)
    else:
        tags = (ls(vertices[cells].mean(axis=1)) < 0).astype(np.int8)
    return lattice, vertices, cells, tags, on_boundary


def generate_cell_mesh(geometry: CellGeometry, h: float) -> PeriodicCellMesh:
    """Periodic, interface-conforming mesh of the unit cell with grid spacing about ``h``."""
    if h <= 0:
        raise ValueError("h must be positive")
    n = max(2, int(round(1.0 / h)))
    lattice, vertices, cells, tags, on_boundary = _template(geometry, n)
    ifac, inorm, icells, bfac = _classify_facets(vertices, cells, tags, on_boundary)
    mesh = TaggedMesh(vertices, cells, tags, ifac, inorm, icells, bfac)
    mesh.check()
    if not geometry.inclusion.empty and len(ifac) < 16:
        raise MeshError(f"interface under-resolved: {len(ifac)} facets (need >= 16)")
    return PeriodicCellMesh(mesh, _periodic_pairs(vertices), n_per_side=n)


def generate_macro_mesh(omega, eps: float, cell_mesh: PeriodicCellMesh) -> TaggedMesh:
    """Tile the cell template over ``omega = [(lo, hi), ...]`` with period ``eps``.

    ``cell_mesh`` must come from :func:`generate_cell_mesh` (structured
    template); each macro vertex records its template node and eps-cell.
    """
    n = cell_mesh.n_per_side
    if n is None:
        raise MeshError("macro tiling needs a structured cell template")
    d = cell_mesh.dim
    omega = [tuple(map(float, o)) for o in omega]
    if len(omega) != d:
        raise ValueError("omega dimension mismatch")
    counts = []
    for lo, hi in omega:
        q = (hi - lo) / eps
        if eps <= 0 or abs(q - round(q)) > 1e-9 or round(q) < 1:
            raise MeshError(f"eps={eps} does not divide the side {hi - lo}")
        counts.append(int(round(q)))
    counts = np.array(counts)
    base = cell_mesh.base
    lat_shape = counts * n + 1
    strides = np.r_[np.cumprod(lat_shape[::-1])[:-1][::-1], 1]
    # every template vertex index equals its lattice flat index in the template
    tidx_lat = np.stack(np.meshgrid(*[np.arange(n + 1)] * d, indexing="ij"), -1).reshape(-1, d)
    ks = np.stack(np.meshgrid(*[np.arange(c) for c in counts], indexing="ij"), -1).reshape(-1, d)
    glat = ks[:, None, :] * n + tidx_lat[None, :, :]  # (K, Nt, d)
    gid = (glat * strides).sum(-1)
    n_nodes = int(np.prod(lat_shape))
    lo = np.array([o[0] for o in omega])
    vertices = np.empty((n_nodes, d))
    node_template = np.empty(n_nodes, dtype=np.int64)
    node_cell = np.empty((n_nodes, d), dtype=np.int64)
    flat_gid = gid.ravel()
    kk = np.repeat(ks, len(tidx_lat), axis=0)
    tt = np.tile(np.arange(len(tidx_lat)), len(ks))
    # interior template nodes may be snapped: place them from the template
    # coordinates; lattice nodes use exact lattice arithmetic
    tv = base.vertices[tt]
    moved = np.any(np.abs(tv * n - tidx_lat[tt]) > 0, axis=1)
    coords = np.where(moved[:, None], lo + eps * (kk + tv), lo + (eps / n) * glat.reshape(-1, d))
    vertices[flat_gid] = coords
    # record a canonical (template, cell) per node: the first occurrence in
    # cell order is the lowest cell, fix it to the floor convention below
    node_template[flat_gid] = cell_mesh.master[tt]
    node_cell[flat_gid] = kk
    # floor convention: a lattice node on a cell face belongs to the upper cell
    glat_nodes = np.stack(np.unravel_index(np.arange(n_nodes), tuple(lat_shape)), -1)
    kfloor = np.minimum(glat_nodes // n, counts - 1)
    on_lattice_face = np.any(glat_nodes % n == 0, axis=1)
    node_cell[on_lattice_face] = kfloor[on_lattice_face]
    rem = glat_nodes[on_lattice_face] - kfloor[on_lattice_face] * n
    rem_id = (rem * (n + 1) ** np.arange(d)[::-1]).sum(-1)
    node_template[on_lattice_face] = cell_mesh.master[rem_id]
    cells = gid[:, base.cells].reshape(-1, d + 1)
    tags = np.tile(base.cell_tag, len(ks))
    ntc = base.n_cells
    icells = (base.interface_cells[None, :, :] + ntc * np.arange(len(ks))[:, None, None]).reshape(-1, 2)
    ifac = gid[:, base.interface_facets].reshape(-1, d)
    inorm = np.tile(base.interface_normals, (len(ks), 1))
    on_boundary = np.any((glat_nodes == 0) | (glat_nodes == lat_shape - 1), axis=1)
    f, _ = _cell_facets(cells)
    uniq, counts_f = np.unique(f, axis=0, return_counts=True)
    single = uniq[counts_f == 1]
    bfac = single[np.all(on_boundary[single], axis=1)]
    mesh = TaggedMesh(vertices, cells, tags, ifac, inorm, icells, bfac,
                      node_template=node_template, node_cell=node_cell, eps=float(eps), template=cell_mesh)
    return mesh


def box_mesh(omega, n, dim: int | None = None) -> TaggedMesh:
    """Structured single-phase mesh of a box with ``n`` intervals per side."""
    dim = dim or len(omega)
    lattice, cells = _grid_2d(n) if dim == 2 else _grid_3d(n)
    lo = np.array([o[0] for o in omega], dtype=float)
    hi = np.array([o[1] for o in omega], dtype=float)
    vertices = lo + lattice / n * (hi - lo)
    cells = _orient(vertices, cells)
    tags = np.zeros(len(cells), dtype=np.int8)
    on_boundary = np.any((lattice == 0) | (lattice == n), axis=1)
    ifac, inorm, icells, bfac = _classify_facets(vertices, cells, tags, on_boundary)
    return TaggedMesh(vertices, cells, tags, ifac, inorm, icells, bfac)


def refine(mesh):
    """Uniform red refinement (2D): each triangle splits into four.

    Accepts a :class:`TaggedMesh` or :class:`PeriodicCellMesh`; tags are
    inherited and periodic pairs are rebuilt from coordinates.
    """
    if isinstance(mesh, PeriodicCellMesh):
        fine = refine(mesh.base)
        n = None if mesh.n_per_side is None else 2 * mesh.n_per_side
        return PeriodicCellMesh(fine, _periodic_pairs(fine.vertices), n_per_side=None if n is None else n)
    if mesh.dim != 2:
        raise NotImplementedError("red refinement is implemented for triangles only")
    c = mesh.cells
    e = np.sort(np.concatenate([c[:, [1, 2]], c[:, [0, 2]], c[:, [0, 1]]]), axis=1)
    edges, inv = np.unique(e, axis=0, return_inverse=True)
    inv = inv.ravel()
    nv = mesh.n_nodes
    mid = nv + inv.reshape(3, -1).T  # midpoint opposite vertex 0, 1, 2
    vertices = np.vstack([mesh.vertices, mesh.vertices[edges].mean(axis=1)])
    v0, v1, v2 = c.T
    m0, m1, m2 = mid.T
    cells = np.concatenate([
        np.stack([v0, m2, m1], 1), np.stack([m2, v1, m0], 1),
        np.stack([m1, m0, v2], 1), np.stack([m0, m1, m2], 1)])
    order = np.arange(4 * len(c)).reshape(4, -1).T.ravel()
    cells = cells[order]
    tags = np.repeat(mesh.cell_tag, 4)
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    on_boundary = np.any((np.abs(vertices - lo) < 1e-12) | (np.abs(vertices - hi) < 1e-12), axis=1)
    ifac, inorm, icells, bfac = _classify_facets(vertices, cells, tags, on_boundary)
    out = TaggedMesh(vertices, cells, tags, ifac, inorm, icells, bfac)
    out.check()
    return out


def write_vtk(mesh: TaggedMesh, path, point_data: dict | None = None, cell_data: dict | None = None):
    """Legacy ASCII VTK unstructured grid with the phase tag as cell data."""
    d = mesh.dim
    vtk_type = 5 if d == 2 else 10
    pts = np.hstack([mesh.vertices, np.zeros((mesh.n_nodes, 3 - d))])
    lines = ["# vtk DataFile Version 3.0", "thermohom mesh", "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_nodes} double"]
    lines += [" ".join(f"{v:.17g}" for v in p) for p in pts]
    k = d + 1
    lines.append(f"CELLS {mesh.n_cells} {mesh.n_cells * (k + 1)}")
    lines += [f"{k} " + " ".join(map(str, c)) for c in mesh.cells]
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += [str(vtk_type)] * mesh.n_cells
    lines.append(f"CELL_DATA {mesh.n_cells}")
    lines += ["SCALARS phase int 1", "LOOKUP_TABLE default"]
    lines += [str(int(t)) for t in mesh.cell_tag]
    for name, vals in (cell_data or {}).items():
        lines += _vtk_array(name, np.asarray(vals))
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        for name, vals in point_data.items():
            lines += _vtk_array(name, np.asarray(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def _vtk_array(name, vals):
    if vals.ndim == 1:
        return [f"SCALARS {name} double 1", "LOOKUP_TABLE default"] + [f"{v:.17g}" for v in vals]
    vals = np.hstack([vals, np.zeros((len(vals), 3 - vals.shape[1]))])
    return [f"VECTORS {name} double"] + [" ".join(f"{x:.17g}" for x in v) for v in vals]
