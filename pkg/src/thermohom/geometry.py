"""Unit cell, phase interface and the a-priori known interface motion.

The motion is described by a deformation map ``s(t, x, y)`` of the unit
cell ``Y = (0, 1)^dim`` parametrised by time ``t`` and macro point ``x``.
Its epsilon-periodic realisation is

    s_eps(t, x) = eps*[x/eps] + eps*s(t, eps*[x/eps], {x/eps})

and every transformation field (F, J, v, W_Gamma, H_Gamma) is evaluated from
analytic derivatives of ``s``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import sympy as sp
from scipy.stats import qmc

from . import expr as ex
from .material import inv_det

_FD_STEP_T = 1e-4


# --------------------------------------------------------------------------
# level sets
# --------------------------------------------------------------------------
class LevelSet:
    """Implicit description of the inclusion ``Y_B = {phi < 0}``."""

    def __init__(self, phi: sp.Expr | None, dim: int, name: str = "custom"):
        self.dim = dim
        self.name = name
        self.empty = phi is None
        if phi is None:
            phi = sp.Integer(1)
        ys = ex.Y[:dim]
        self.expr = phi
        self._phi = ex.compile_scalar(phi, dim)
        self._grad = ex.compile_vector([sp.diff(phi, v) for v in ys], dim)
        self._hess = ex.compile_matrix(sp.Matrix(dim, dim, lambda i, j: sp.diff(phi, ys[i], ys[j])), dim)

    def __call__(self, y):
        return self._phi(0.0, np.zeros_like(y), y)

    def grad(self, y):
        return self._grad(0.0, np.zeros_like(y), y)

    def hessian(self, y):
        return self._hess(0.0, np.zeros_like(y), y)

    def project(self, y, iterations: int = 30):
        """Newton projection of points onto the zero level set."""
        y = np.array(y, dtype=float)
        for _ in range(iterations):
            p = self(y)
            g = self.grad(y)
            g2 = np.einsum("...i,...i->...", g, g)
            step = (p / np.where(g2 > 0, g2, 1.0))[..., None] * g
            y = y - step
            if np.max(np.abs(p), initial=0.0) < 1e-15:
                break
        return y

    def normal(self, y):
        g = self.grad(y)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def sample_interface(self, n: int) -> np.ndarray:
        """Deterministic points on Gamma (projected from rays through the cell centre)."""
        if self.empty:
            return np.zeros((0, self.dim))
        c = np.full(self.dim, 0.5)
        if self.dim == 2:
            ang = 2 * np.pi * (np.arange(n) + 0.5) / n
            dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        else:
            dirs = _fibonacci_sphere(n)
        # march outwards from the centre to bracket the zero crossing
        r = np.linspace(0.0, 0.5, 201)
        pts = c + r[None, :, None] * dirs[:, None, :]
        vals = self(pts)
        out = []
        for i in range(n):
            sign_change = np.nonzero(np.diff(np.sign(vals[i])) != 0)[0]
            if len(sign_change) == 0:
                continue
            j = sign_change[0]
            out.append(0.5 * (pts[i, j] + pts[i, j + 1]))
        return self.project(np.array(out))


def _fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5**0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=-1)


def circle(dim: int = 2, radius: float = 0.25, center=None) -> LevelSet:
    """Ball of given radius (signed distance)."""
    center = [0.5] * dim if center is None else list(center)
    ys = ex.Y[:dim]
    r = sp.sqrt(sum((ys[i] - sp.nsimplify(center[i])) ** 2 for i in range(dim)))
    return LevelSet(r - sp.nsimplify(radius), dim, name="circle")


def ellipse(dim: int = 2, semi_axes=(0.3, 0.2), center=None) -> LevelSet:
    center = [0.5] * dim if center is None else list(center)
    ys = ex.Y[:dim]
    q = sum(((ys[i] - sp.nsimplify(center[i])) / sp.nsimplify(semi_axes[i])) ** 2 for i in range(dim))
    return LevelSet(q - 1, dim, name="ellipse")


def no_inclusion(dim: int = 2) -> LevelSet:
    return LevelSet(None, dim, name="none")


@dataclass
class CellGeometry:
    """Unit cell with inclusion ``Y_B`` and clearance to the cell boundary."""

    dim: int
    inclusion: LevelSet
    clearance: float = 0.2

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.inclusion.dim != self.dim:
            raise ValueError("level set dimension mismatch")

    def check_clearance(self, samples: int = 256) -> bool:
        """Sampled check that closure(Y_B) keeps ``clearance`` from the cell boundary."""
        pts = self.inclusion.sample_interface(samples)
        if len(pts) == 0:
            return True
        return bool(np.min(_dist_to_cell_boundary(pts)) >= self.clearance)


def _dist_to_cell_boundary(y):
    return np.min(np.minimum(y, 1.0 - y), axis=-1)


# --------------------------------------------------------------------------
# deformation maps
# --------------------------------------------------------------------------
@dataclass
class TransformationFields:
    """Pointwise transformation fields of the epsilon-scaled map."""

    F: np.ndarray
    J: np.ndarray
    v: np.ndarray
    W_Gamma: np.ndarray
    H_Gamma: np.ndarray


@dataclass
class CellFields:
    """Cell-level fields of ``s`` at ``(t, x, y)`` (no epsilon scaling)."""

    F: np.ndarray
    J: np.ndarray
    Finv: np.ndarray
    v: np.ndarray
    normal: np.ndarray
    W: np.ndarray
    H: np.ndarray


class DeformationMap:
    """Analytic deformation map ``s(t, x, y)`` of the unit cell.

    ``components`` are sympy expressions in ``t``, ``x0..``, ``y0..``.  An
    optional *reduction* ``(param, reduced)`` declares that ``s`` depends on
    ``(t, x)`` only through the scalar ``param(t, x)``; ``reduced`` is then the
    map written in terms of the symbol ``P`` and ``y``.  Cell problems use it
    to share work between macro points.
    """

    P = sp.Symbol("P", real=True)

    def __init__(self, components: Sequence[sp.Expr], dim: int, *, name: str = "custom",
                 clearance: float = 0.2, det_bounds=(0.1, 10.0), reduction=None,
                 params: dict | None = None):
        self.dim = dim
        self.name = name
        self.clearance = float(clearance)
        self.det_bounds = tuple(float(b) for b in det_bounds)
        self.params = dict(params or {})
        t, ys = ex.T, ex.Y[:dim]
        s = sp.Matrix([sp.sympify(c) for c in components])
        if s.shape != (dim, 1):
            raise ValueError(f"expected {dim} components")
        self.expr = s
        ds_dy = s.jacobian(ys)
        ds_dt = s.diff(t)
        self._s = ex.compile_vector(list(s), dim)
        self._F = ex.compile_matrix(ds_dy, dim)
        self._v = ex.compile_vector(list(ds_dt), dim)
        self._dF = ex.Compiled([sp.diff(ds_dy[i, j], ys[k]) for i in range(dim) for j in range(dim)
                                for k in range(dim)], (dim, dim, dim), dim)
        self._Ft = ex.compile_matrix(ds_dy.diff(t), dim)
        self.identity = all(sp.expand(s[i] - ys[i]) == 0 for i in range(dim))
        self.reduction = None
        if reduction is not None:
            pexpr, reduced = reduction
            reduced = sp.Matrix([sp.sympify(c) for c in reduced])
            self._param = ex.compile_scalar(pexpr, dim)
            fred = reduced.jacobian(ys)
            self._F_red = ex.Compiled([e.subs(self.P, ex.T) for e in fred], (dim, dim), dim)
            self.reduction = (pexpr, reduced)

    # -- raw cell-level evaluation -------------------------------------
    def s(self, t, x, y):
        return self._s(t, x, y)

    def ds_dy(self, t, x, y):
        return self._F(t, x, y)

    def ds_dt(self, t, x, y):
        return self._v(t, x, y)

    def dF_dt(self, t, x, y):
        return self._Ft(t, x, y)

    def cell_parameter(self, t, x):
        """Reduced parameter of the cell problems at ``(t, x)`` (requires a reduction)."""
        x = np.asarray(x, dtype=float)
        return self._param(t, x, np.zeros_like(x))

    def F_at_parameter(self, p, y):
        y = np.asarray(y, dtype=float)
        return self._F_red(p, np.zeros_like(y), y)

    def cell_fields(self, t, x, y, level_set: LevelSet | None = None) -> CellFields:
        """F, J, F^-1, velocity and interface quantities of ``s`` at ``(t, x, y)``.

        ``normal`` is the unit normal of the deformed level set at ``s(y)``
        (pointing out of the inclusion), ``W`` the normal velocity and ``H``
        the curvature ``-div_y(F^-1 n)``; the latter two are zero without a
        level set.
        """
        F = self._F(t, x, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            Finv, J = inv_det(F)
        if np.any(np.abs(J) < 1e-12):
            raise np.linalg.LinAlgError("deformation gradient is not invertible")
        v = self._v(t, x, y)
        shape = J.shape
        if level_set is None or level_set.empty:
            z = np.zeros(shape + (self.dim,))
            return CellFields(F, J, Finv, v, z, np.zeros(shape), np.zeros(shape))
        g = level_set.grad(np.broadcast_to(y, shape + (self.dim,)))
        hess = level_set.hessian(np.broadcast_to(y, shape + (self.dim,)))
        FinvT = np.swapaxes(Finv, -1, -2)
        w = np.einsum("...ij,...j->...i", FinvT, g)
        nw = np.linalg.norm(w, axis=-1)
        N = w / nw[..., None]
        dF = self._dF(t, x, y)  # [..., i, j, k] = d F_ij / d y_k
        # d(F^-1)/dy_k = -F^-1 dF_k F^-1
        dFinv = -np.einsum("...ia,...abk,...bj->...ijk", Finv, dF, Finv)
        # dw_i/dy_k = d(F^-T)_{ij}/dy_k g_j + F^-T_{ij} hess_{jk}
        dw = np.einsum("...jik,...j->...ik", dFinv, g) + np.einsum("...ij,...jk->...ik", FinvT, hess)
        dN = (dw - N[..., :, None] * np.einsum("...i,...ik->...k", N, dw)[..., None, :]) / nw[..., None, None]
        # div(F^-1 N) = sum_k d(F^-1)_{kj}/dy_k N_j + F^-1_{kj} dN_j/dy_k
        div = np.einsum("...kjk,...j->...", dFinv, N) + np.einsum("...kj,...jk->...", Finv, dN)
        W = np.einsum("...i,...i->...", v, N)
        return CellFields(F, J, Finv, v, N, W, -div)

    # -- checks ----------------------------------------------------------
    def __repr__(self):
        return f"DeformationMap({self.name!r}, dim={self.dim})"


def identity_map(dim: int = 2, clearance: float = 0.2) -> DeformationMap:
    ys = ex.Y[:dim]
    return DeformationMap(list(ys), dim, name="identity", clearance=clearance,
                          det_bounds=(1.0, 1.0), reduction=(sp.Integer(0), list(ys)))


def radial_growth_map(dim: int = 2, amplitude: float = 0.4, variation: float = 0.5,
                      r_inner: float = 0.2, r_outer: float = 0.4, center=None,
                      det_bounds=(0.3, 3.0)) -> DeformationMap:
    """Inclusion boundary moving radially with a macro-dependent speed.

    ``s = y + t*g(x)*phi(|y - c|)*(y - c)`` where ``g(x) = amplitude*(1 +
    variation*prod_i sin(pi*x_i))`` and ``phi`` is a C2 ramp equal to one for
    ``r <= r_inner`` and zero for ``r >= r_outer``.  Points closer than
    ``0.5 - r_outer`` to the cell boundary are fixed, hence the clearance
    ``2*(0.5 - r_outer)``.
    """
    center = [0.5] * dim if center is None else list(center)
    t, xs, ys = ex.T, ex.X[:dim], ex.Y[:dim]
    A = sp.nsimplify(amplitude)
    g = A * (1 + sp.nsimplify(variation) * sp.prod([sp.sin(sp.pi * xi) for xi in xs]))
    c = [sp.nsimplify(ci) for ci in center]
    r = sp.sqrt(sum((ys[i] - c[i]) ** 2 for i in range(dim)))
    ri, ro = sp.nsimplify(r_inner), sp.nsimplify(r_outer)
    phi = ex.smoothstep((ro - r) / (ro - ri))
    P = DeformationMap.P
    comps = [ys[i] + t * g * phi * (ys[i] - c[i]) for i in range(dim)]
    reduced = [ys[i] + P * phi * (ys[i] - c[i]) for i in range(dim)]
    clearance = 2 * (0.5 - float(r_outer))
    return DeformationMap(comps, dim, name="radial-growth", clearance=clearance, det_bounds=det_bounds,
                          reduction=(t * g, reduced),
                          params=dict(amplitude=amplitude, variation=variation, r_inner=r_inner,
                                      r_outer=r_outer, center=center))


def map_from_expressions(texts: Sequence[str], dim: int, clearance: float = 0.2,
                         det_bounds=(0.1, 10.0), name: str = "expression") -> DeformationMap:
    comps = [ex.parse(s, dim) for s in texts]
    return DeformationMap(comps, dim, name=name, clearance=clearance, det_bounds=det_bounds)


MAP_PRESETS = {"identity": identity_map, "radial-growth": radial_growth_map}


def make_map(preset: str, dim: int = 2, **kwargs) -> DeformationMap:
    try:
        factory = MAP_PRESETS[preset]
    except KeyError:
        raise ValueError(f"unknown map preset {preset!r}; choose from {sorted(MAP_PRESETS)}") from None
    return factory(dim, **kwargs)


# --------------------------------------------------------------------------
# unfolding and epsilon-scaled fields
# --------------------------------------------------------------------------
def unfold(x, eps: float):
    """Split ``x = eps*k + eps*y`` with integer ``k`` and ``y`` in ``[0, 1)``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    q = np.asarray(x, dtype=float) / eps
    r = np.rint(q)
    # treat round-off below an integer as lying on the grid line
    q = np.where(np.abs(q - r) <= 1e-10 * np.maximum(1.0, np.abs(q)), r, q)
    k = np.floor(q)
    return k.astype(np.int64), q - k


def eval_s_eps(smap: DeformationMap, t, x, eps: float):
    if eps <= 0:
        raise ValueError("eps must be positive")
    k, y = unfold(x, eps)
    xk = eps * k
    return xk + eps * smap.s(t, xk, y)


def eval_transformation(smap: DeformationMap, t, x, eps: float,
                        level_set: LevelSet | None = None) -> TransformationFields:
    """Transformation fields of ``s_eps`` at macro points ``x``.

    The y-derivative of ``eps*s(., ., x/eps)`` cancels the eps factors, so
    ``F`` is ``grad_y s`` at ``(t, eps[x/eps], {x/eps})``.  ``v`` and
    ``W_Gamma`` carry one factor eps and ``H_Gamma`` the factor ``1/eps`` of
    the eps-scaled interface.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    k, y = unfold(x, eps)
    cf = smap.cell_fields(t, eps * k, y, level_set)
    return TransformationFields(cf.F, cf.J, eps * cf.v, eps * cf.W, cf.H / eps)


# --------------------------------------------------------------------------
# admissibility
# --------------------------------------------------------------------------
@dataclass
class AdmissibilityReport:
    entries: dict = field(default_factory=dict)

    def add(self, key, passed, detail=""):
        self.entries[key] = (bool(passed), detail)

    @property
    def passed(self):
        return all(p for p, _ in self.entries.values())

    def failures(self):
        return [k for k, (p, _) in self.entries.items() if not p]

    def lines(self):
        return [f"{'PASS' if p else 'FAIL'} {k}: {d}" for k, (p, d) in self.entries.items()]


def _sample_points(samples, dim, t_max, omega, seed=0):
    """Deterministic (t, x, y) samples from an unscrambled Halton sequence."""
    n_t = 1 + 2 * dim
    pts = qmc.Halton(n_t, scramble=False).random(samples + 1)[1:]
    lo = np.array([o[0] for o in omega])
    hi = np.array([o[1] for o in omega])
    t = pts[:, 0] * t_max
    x = lo + pts[:, 1:1 + dim] * (hi - lo)
    y = pts[:, 1 + dim:]
    return t, x, y


def check_admissibility(smap: DeformationMap, geometry: CellGeometry, samples: int = 64,
                        t_max: float = 1.0, omega=None) -> AdmissibilityReport:
    """Sampled check of the eight standing assumptions on ``s``.

    1 C2 regularity and periodicity; 2 bijectivity of ``s(t,x,.)`` on the
    closed cell; 3 invertibility with smooth inverse; 4 ``s(0,x,y) = y``;
    5 ``s = y`` on the cell boundary; 6 deformed interface keeps distance
    ``c`` from the boundary; 7 ``s = y`` within ``c/2`` of the boundary;
    8 ``c_s <= det grad s <= C_s``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    dim = smap.dim
    omega = omega or [(0.0, 1.0)] * dim
    c = smap.clearance
    rep = AdmissibilityReport()
    t, x, y = _sample_points(samples, dim, t_max, omega)

    # 1: analytic Jacobian consistent with central differences, periodic in y
    h = 1e-6
    F = smap.ds_dy(t, x, y)
    fd = np.empty_like(F)
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = h
        fd[..., :, k] = (smap.s(t, x, y + e) - smap.s(t, x, y - e)) / (2 * h)
    err_jac = float(np.max(np.abs(F - fd)))
    face = y.copy()
    per_err = 0.0
    for k in range(dim):
        lo, hi = face.copy(), face.copy()
        lo[:, k], hi[:, k] = 0.0, 1.0
        d = (smap.s(t, x, hi) - hi) - (smap.s(t, x, lo) - lo)
        per_err = max(per_err, float(np.max(np.abs(d))))
    ok1 = err_jac < 1e-5 and per_err < 1e-12 and np.all(np.isfinite(F))
    rep.add("1_regularity", ok1, f"jacobian-vs-fd {err_jac:.2e}, periodicity {per_err:.2e}")

    # 8: determinant bounds
    J = np.linalg.det(F)
    n_dense = 6
    grid = np.stack(np.meshgrid(*[np.linspace(0, 1, 4 * n_dense + 1)] * dim, indexing="ij"), -1).reshape(-1, dim)
    Jd = np.array([np.linalg.det(smap.ds_dy(t[i], x[i], grid)).min() for i in range(min(samples, 16))])
    cs, Cs = smap.det_bounds
    jmin, jmax = min(J.min(), Jd.min()), J.max()
    ok8 = cs - 1e-12 <= jmin and jmax <= Cs + 1e-12
    rep.add("8_det_bounds", ok8, f"det in [{jmin:.4g}, {jmax:.4g}], declared [{cs}, {Cs}]")

    # 2: bijectivity via orientation of the mapped lattice and range check
    folds = 0
    out_of_cell = 0.0
    lattice = np.stack(np.meshgrid(*[np.linspace(0, 1, 17)] * dim, indexing="ij"), -1)
    for i in range(min(samples, 16)):
        img = smap.s(t[i], x[i], lattice)
        out_of_cell = max(out_of_cell, float(np.max(np.maximum(-img, img - 1.0))))
        if dim == 2:
            a = img[1:, :-1] - img[:-1, :-1]
            b = img[:-1, 1:] - img[:-1, :-1]
            a2 = img[1:, 1:] - img[1:, :-1]
            b2 = img[:-1, 1:] - img[1:, :-1]
            cr1 = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
            cr2 = a2[..., 0] * b2[..., 1] - a2[..., 1] * b2[..., 0]
            folds += int(np.sum(cr1 <= 0) + np.sum(cr2 <= 0))
        else:
            d0 = img[1:, :-1, :-1] - img[:-1, :-1, :-1]
            d1 = img[:-1, 1:, :-1] - img[:-1, :-1, :-1]
            d2 = img[:-1, :-1, 1:] - img[:-1, :-1, :-1]
            folds += int(np.sum(np.einsum("...i,...i->...", np.cross(d0, d1), d2) <= 0))
    ok2 = folds == 0 and out_of_cell <= 1e-12 and jmin > 0
    rep.add("2_bijective", ok2, f"folded lattice cells {folds}, leaves cell by {out_of_cell:.2e}")

    # 3: inverse exists and is smooth: Newton inversion from the sample points
    z = y.copy()
    for _ in range(50):
        r = smap.s(t, x, z) - y
        z = z - np.linalg.solve(smap.ds_dy(t, x, z), r[..., None])[..., 0]
    inv_res = float(np.max(np.abs(smap.s(t, x, z) - y)))
    ok3 = ok2 and ok8 and inv_res < 1e-10
    rep.add("3_inverse", ok3, f"newton inversion residual {inv_res:.2e}")

    # 4: identity at t = 0
    e4 = float(np.max(np.abs(smap.s(np.zeros_like(t), x, y) - y)))
    rep.add("4_initial_identity", e4 < 1e-12, f"max |s(0,x,y)-y| = {e4:.2e}")

    # 5: identity on the cell boundary
    yb = y.copy()
    e5 = 0.0
    for k in range(dim):
        for val in (0.0, 1.0):
            yb = y.copy()
            yb[:, k] = val
            e5 = max(e5, float(np.max(np.abs(smap.s(t, x, yb) - yb))))
    rep.add("5_boundary_identity", e5 < 1e-12, f"max deviation on dY {e5:.2e}")

    # 6: deformed interface keeps clearance
    gam = geometry.inclusion.sample_interface(max(16, samples))
    if len(gam):
        dmin = np.inf
        for i in range(samples):
            img = smap.s(t[i], x[i], gam)
            dmin = min(dmin, float(np.min(_dist_to_cell_boundary(img))))
        rep.add("6_interface_clearance", dmin > c, f"min dist(dY, s(Gamma)) = {dmin:.4g}, c = {c}")
    else:
        rep.add("6_interface_clearance", True, "no interface")

    # 7: identity in the boundary band of width c/2
    u = qmc.Halton(dim, scramble=False).random(samples + 1)[1:]
    band = []
    for k in range(dim):
        for side in (0.0, 1.0):
            p = u.copy()
            p[:, k] = side + (1 - 2 * side) * u[:, (k + 1) % dim] * (c / 2) * (1 - 1e-9)
            band.append(p)
    band = np.concatenate(band)
    tb = np.resize(t, len(band))
    xb = np.resize(x, (len(band), dim))
    e7 = float(np.max(np.abs(smap.s(tb, xb, band) - band)))
    rep.add("7_band_identity", e7 < 1e-12, f"max deviation within c/2 of dY {e7:.2e}")
    rep.entries = dict(sorted(rep.entries.items()))
    return rep


# --------------------------------------------------------------------------
# movement bounds
# --------------------------------------------------------------------------
MOVEMENT_COLUMNS = ("F", "F_inv", "J", "v_over_eps", "W_over_eps", "eps_H")


def _matched_points(eps, n_y, level_set, dim, omega):
    """Macro points ``eps*(k + y)`` for every eps-cell and a fixed y set."""
    ny = max(1, int(round(n_y ** (1.0 / dim))))
    g = (np.arange(ny) + 0.5) / ny
    ys = np.stack(np.meshgrid(*[g] * dim, indexing="ij"), -1).reshape(-1, dim)
    counts = [int(round((o[1] - o[0]) / eps)) for o in omega]
    ks = np.stack(np.meshgrid(*[np.arange(n) for n in counts], indexing="ij"), -1).reshape(-1, dim)
    lo = np.array([o[0] for o in omega])
    x_bulk = lo + eps * (ks[:, None, :] + ys[None, :, :])
    gam = level_set.sample_interface(max(8, n_y)) if level_set is not None else np.zeros((0, dim))
    x_gam = lo + eps * (ks[:, None, :] + gam[None, :, :])
    return x_bulk.reshape(-1, dim), x_gam.reshape(-1, dim)


def movement_sup_norms(smap, eps, t_values, level_set, n_y=64, omega=None, time_derivative=False):
    dim = smap.dim
    omega = omega or [(0.0, 1.0)] * dim
    xb, xg = _matched_points(eps, n_y, level_set, dim, omega)
    row = dict.fromkeys(MOVEMENT_COLUMNS, 0.0)

    def fields(t):
        fb = eval_transformation(smap, t, xb, eps, None)
        Finv = np.linalg.inv(fb.F)
        if len(xg):
            fg = eval_transformation(smap, t, xg, eps, level_set)
            W, H = fg.W_Gamma, fg.H_Gamma
        else:
            W = H = np.zeros(1)
        return fb.F, Finv, fb.J, fb.v / eps, W / eps, eps * H

    for t in t_values:
        if time_derivative:
            hi, lo = fields(t + _FD_STEP_T), fields(t - _FD_STEP_T)
            vals = [(a - b) / (2 * _FD_STEP_T) for a, b in zip(hi, lo)]
        else:
            vals = fields(t)
        for key, val in zip(MOVEMENT_COLUMNS, vals):
            row[key] = max(row[key], float(np.max(np.abs(val), initial=0.0)))
    return row


def verify_movement_bounds(smap: DeformationMap, eps_list, samples: int = 64, level_set=None,
                           t_max: float = 1.0, n_times: int = 5, factor: float = 2.0, omega=None,
                           time_derivative: bool = False):
    """Sampled sup-norms of the scaled transformation fields per eps.

    Returns ``(rows, uniform)`` where ``rows[i]`` maps each column name to its
    sup-norm for ``eps_list[i]`` and ``uniform[col]`` says whether the column
    stays within ``factor`` (max/min) across the eps list.
    """
    for eps in eps_list:
        if eps <= 0:
            raise ValueError("eps must be positive")
    # skip t = 0 for time derivatives so the stencil stays inside the horizon
    t_values = np.linspace(0.0, t_max, n_times)
    if time_derivative:
        t_values = np.clip(t_values, _FD_STEP_T, t_max - _FD_STEP_T)
    rows = [movement_sup_norms(smap, e, t_values, level_set, samples, omega, time_derivative)
            for e in eps_list]
    uniform = {}
    for col in MOVEMENT_COLUMNS:
        vals = np.array([r[col] for r in rows])
        if np.all(vals == 0):
            uniform[col] = True
        else:
            uniform[col] = bool(vals.min() > 0 and vals.max() / vals.min() <= factor)
    return rows, uniform
