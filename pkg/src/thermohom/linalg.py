"""Sparse factorizations and preconditioned Krylov solves.

Time-dependent systems change slowly from step to step, so a factorization
of one representative matrix is kept and used as a preconditioner for the
current matrix.  CHOLMOD (scikit-sparse, optional) is used for symmetric
positive definite matrices; SuperLU otherwise, and smoothed-aggregation AMG
once a direct factorization would be too large.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .fem import SolverError

log = logging.getLogger(__name__)

try:  # optional accelerator
    from sksparse import cholmod as _cholmod
except ImportError:  # pragma: no cover - depends on the environment
    _cholmod = None

DIRECT_LIMIT = 600_000
SPLU_LIMIT = 150_000


def have_cholmod() -> bool:
    return _cholmod is not None


class Factorization:
    """Approximate inverse of a sparse matrix, usable as a ``LinearOperator``.

    ``kind`` is ``"cholmod"``, ``"splu"`` or ``"amg"``; the default picks the
    cheapest exact option that fits ``DIRECT_LIMIT``.
    """

    def __init__(self, A, symmetric=True, kind=None, near_null=None):
        A = sps.csc_matrix(A)
        n = A.shape[0]
        if kind is None:
            if symmetric and _cholmod is not None and n <= DIRECT_LIMIT:
                kind = "cholmod"
            elif n <= SPLU_LIMIT:
                kind = "splu"
            else:
                kind = "amg"
        self.kind = kind
        self.shape = A.shape
        if kind == "cholmod":
            try:
                self._f = _cholmod.cholesky(A, mode="simplicial", ordering_method="metis")
            except Exception:  # metis may be unavailable in the linked CHOLMOD
                self._f = _cholmod.cholesky(A, mode="simplicial")
            self._apply = self._f.solve_A
        elif kind == "splu":
            try:
                self._f = spla.splu(A, permc_spec="COLAMD")
            except RuntimeError as exc:
                raise SolverError(f"factorization failed: {exc}") from exc
            self._apply = self._f.solve
        elif kind == "amg":
            import pyamg

            A = sps.csr_matrix(A)
            if symmetric:
                ml = pyamg.smoothed_aggregation_solver(A, B=near_null)
            else:
                ml = pyamg.smoothed_aggregation_solver(A, B=near_null, symmetry="nonsymmetric")
            self._f = ml
            M = ml.aspreconditioner(cycle="V")
            self._apply = M.matvec
        else:
            raise ValueError(f"unknown factorization kind {kind!r}")
        self.exact = kind != "amg"

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.ndim == 2 and self.kind == "amg":
            return np.column_stack([self._apply(b[:, i]) for i in range(b.shape[1])])
        return self._apply(b)

    def operator(self):
        return spla.LinearOperator(self.shape, matvec=self.solve, dtype=float)


def krylov(A, b, M: Factorization | None, symmetric=True, x0=None, tol=1e-10, maxiter=500):
    """Solve ``A x = b`` by PCG (symmetric) or GMRES; returns ``(x, iterations)``."""
    b = np.asarray(b, dtype=float)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b), 0
    count = [0]

    def cb(_):
        count[0] += 1

    op = None if M is None else M.operator()
    with np.errstate(all="ignore"):
        if symmetric:
            x, info = spla.cg(A, b, x0=x0, rtol=tol, maxiter=maxiter, M=op, callback=cb)
        else:
            x, info = spla.gmres(A, b, x0=x0, rtol=tol, restart=min(maxiter, 80), maxiter=max(1, maxiter // 80),
                                 M=op, callback=cb, callback_type="pr_norm")
    res = np.linalg.norm(A @ x - b) / nb
    if not np.isfinite(res) or (info != 0 and res > 100 * tol):
        raise SolverError(f"Krylov solve stalled after {count[0]} iterations (residual {res:.2e})", res)
    return x, count[0]


class FrozenSolver:
    """Solve a sequence of related systems with a lazily refreshed preconditioner.

    The first matrix passed is factorized; later calls run a Krylov method
    preconditioned by it and refactor when the iteration count exceeds
    ``refresh_iters``.  Nonsymmetric systems may supply a symmetric positive
    definite surrogate ``pmat`` (e.g. the matrix without transport) whose
    Cholesky factor then preconditions GMRES.
    """

    def __init__(self, symmetric=True, tol=1e-10, refresh_iters=40, kind=None, near_null=None,
                 refactor_below=20_000):
        self.symmetric = symmetric
        self.refactor_below = refactor_below
        self.tol = tol
        self.refresh_iters = refresh_iters
        self.kind = kind
        self.near_null = near_null
        self.M: Factorization | None = None
        self.iterations: list[int] = []
        self.refreshes = 0

    def prepare(self, A, pmat=None):
        if pmat is not None:
            self.M = Factorization(pmat, True, self.kind, self.near_null)
        else:
            self.M = Factorization(A, self.symmetric, self.kind, self.near_null)
        self.refreshes += 1

    def __call__(self, A, b, x0=None, pmat=None):
        A = sps.csr_matrix(A)
        if self.M is None or (self.M.exact and A.shape[0] <= self.refactor_below):
            # small systems: refactoring the actual matrix beats iterating
            small = A.shape[0] <= self.refactor_below
            self.prepare(A, None if small else pmat)
        x, its = krylov(A, b, self.M, self.symmetric, x0, self.tol)
        self.iterations.append(its)
        if its > self.refresh_iters:
            log.debug("refreshing preconditioner after %d iterations", its)
            self.prepare(A, pmat)
        return x


class _BlockTriangular:
    """Block lower-triangular preconditioner ``[[Mu, 0], [L, Mt]]^-1``."""

    def __init__(self, Mu, Mt, L):
        self.Mu, self.Mt, self.L = Mu, Mt, L
        self.nu = Mu.shape[0]
        n = self.nu + Mt.shape[0]
        self.shape = (n, n)

    def solve(self, r):
        zu = self.Mu.solve(r[:self.nu])
        return np.concatenate([zu, self.Mt.solve(r[self.nu:] - self.L @ zu)])

    def operator(self):
        return spla.LinearOperator(self.shape, matvec=self.solve, dtype=float)


class BlockSolver:
    """Implicit step of the displacement/temperature block system

        [K_uu   -B^T] [U]     [F_u]
        [L       H  ] [T]  =  [F_t]

    ``B`` (thermal stress) or ``L`` (dissipation) may be ``None``; the
    system is then block triangular and solved by two substitutions.
    Otherwise GMRES runs on the coupled matrix with a block lower-triangular
    preconditioner made of the frozen factorizations.
    """

    def __init__(self, n_u, tol=1e-10, refactor_below=20_000, dim=2):
        rigid = np.zeros((n_u, dim))
        for c in range(dim):
            rigid[c::dim, c] = 1.0
        self.u = FrozenSolver(symmetric=True, tol=tol, near_null=rigid, refactor_below=refactor_below)
        self.t = FrozenSolver(symmetric=False, tol=tol, refactor_below=refactor_below)
        self.tol = tol
        self.coupled_iterations: list[int] = []

    def solve(self, Kuu, B, L, H, Hsym, Fu, Ft, x0u=None, x0t=None):
        if L is None:
            T = self.t(H, Ft, x0=x0t, pmat=Hsym)
            U = self.u(Kuu, Fu if B is None else Fu + B.T @ T, x0=x0u)
            return U, T
        if B is None:
            U = self.u(Kuu, Fu, x0=x0u)
            T = self.t(H, Ft - L @ U, x0=x0t, pmat=Hsym)
            return U, T
        return self._coupled(Kuu, B, L, H, Hsym, Fu, Ft, x0u, x0t)

    def _coupled(self, Kuu, B, L, H, Hsym, Fu, Ft, x0u, x0t):
        nu = Kuu.shape[0]
        A = sps.bmat([[Kuu, -B.T], [L, H]], format="csr")
        b = np.concatenate([Fu, Ft])
        if A.shape[0] <= self.t.refactor_below:
            try:
                x = spla.splu(sps.csc_matrix(A)).solve(b)
            except RuntimeError as exc:
                raise SolverError(f"coupled factorization failed: {exc}") from exc
            return x[:nu], x[nu:]
        if self.u.M is None:
            self.u.prepare(Kuu)
        if self.t.M is None:
            self.t.prepare(H, Hsym)
        x0 = None if x0u is None else np.concatenate([x0u, x0t])
        x, its = krylov(A, b, _BlockTriangular(self.u.M, self.t.M, L), symmetric=False, x0=x0, tol=self.tol)
        self.coupled_iterations.append(its)
        if its > self.t.refresh_iters:
            self.u.prepare(Kuu)
            self.t.prepare(H, Hsym)
        return x[:nu], x[nu:]

    def iterations(self):
        return dict(u=list(self.u.iterations), theta=list(self.t.iterations),
                    coupled=list(self.coupled_iterations))
