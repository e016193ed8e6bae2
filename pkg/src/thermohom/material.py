"""Material constants, coupling modes and fixed-domain pullbacks."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

COUPLING_MODES = ("full", "no_thermal_stress", "no_dissipation", "micro_coupled")
PROVEN_MODES = ("no_thermal_stress", "no_dissipation", "micro_coupled")


def isotropic_stiffness(lam: float, mu: float, dim: int = 2) -> np.ndarray:
    I = np.eye(dim)
    return (lam * np.einsum("ij,kl->ijkl", I, I)
            + mu * (np.einsum("ik,jl->ijkl", I, I) + np.einsum("il,jk->ijkl", I, I)))


@dataclass(frozen=True)
class MaterialParameters:
    """Two-phase thermoelastic constants (unscaled) and the coupling mode.

    The eps-scalings of phase B (``eps^2`` for stiffness and conductivity,
    ``eps`` for expansion and dissipation) are applied by the eps-problem,
    not stored here.  ``sigma_0`` is kept for completeness and unused.
    """

    C_A: np.ndarray
    C_B: np.ndarray
    K_A: np.ndarray
    K_B: np.ndarray
    alpha_A: np.ndarray
    alpha_B: np.ndarray
    gamma_A: np.ndarray
    gamma_B: np.ndarray
    rho_A: float = 1.0
    rho_B: float = 1.0
    cd_A: float = 1.0
    cd_B: float = 1.0
    L_AB: float = 0.0
    sigma_0: float = 0.0
    coupling_mode: str = "full"

    def __post_init__(self):
        if self.coupling_mode not in COUPLING_MODES:
            raise ValueError(f"coupling_mode must be one of {COUPLING_MODES}")
        for name in ("rho_A", "rho_B", "cd_A", "cd_B"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        d = self.dim
        for name in ("K_A", "K_B"):
            K = np.asarray(getattr(self, name))
            if K.shape != (d, d) or np.max(np.abs(K - K.T)) > 1e-12 or np.linalg.eigvalsh(K).min() <= 0:
                raise ValueError(f"{name} must be symmetric positive definite")
        for name in ("C_A", "C_B"):
            C = np.asarray(getattr(self, name))
            if C.shape != (d,) * 4:
                raise ValueError(f"{name} has wrong shape")
            for perm in ((1, 0, 2, 3), (0, 1, 3, 2), (2, 3, 0, 1)):
                if np.max(np.abs(C - C.transpose(perm))) > 1e-12:
                    raise ValueError(f"{name} lacks minor/major symmetry")
            if np.linalg.eigvalsh(_voigt(C)).min() <= 0:
                raise ValueError(f"{name} is not positive definite on symmetric matrices")

    @property
    def dim(self) -> int:
        return np.asarray(self.K_A).shape[0]

    @property
    def c_A(self) -> float:
        return self.rho_A * self.cd_A

    @property
    def c_B(self) -> float:
        return self.rho_B * self.cd_B

    def with_mode(self, mode: str) -> "MaterialParameters":
        return replace(self, coupling_mode=mode)

    def effective(self) -> "MaterialParameters":
        """Copy with the coefficients switched off by the coupling mode set to zero."""
        z = np.zeros_like(np.asarray(self.alpha_A, dtype=float))
        mode = self.coupling_mode
        upd = {}
        if mode == "no_thermal_stress":
            upd = dict(alpha_A=z, alpha_B=z)
        elif mode == "no_dissipation":
            upd = dict(gamma_A=z, gamma_B=z)
        elif mode == "micro_coupled":
            upd = dict(alpha_A=z, gamma_A=z)
        return replace(self, **upd)

    @classmethod
    def isotropic(cls, dim=2, lam=(1.0, 1.0), mu=(1.0, 1.0), k=(1.0, 1.0), alpha=(0.5, 0.5),
                  gamma=(0.5, 0.5), rho=(1.0, 1.0), cd=(1.0, 1.0), L_AB=0.1, sigma_0=0.0,
                  coupling_mode="full"):
        """Isotropic phases; pairs are (phase A, phase B)."""
        I = np.eye(dim)
        return cls(isotropic_stiffness(lam[0], mu[0], dim), isotropic_stiffness(lam[1], mu[1], dim),
                   k[0] * I, k[1] * I, alpha[0] * I, alpha[1] * I, gamma[0] * I, gamma[1] * I,
                   rho[0], rho[1], cd[0], cd[1], L_AB, sigma_0, coupling_mode)


def _voigt(C):
    d = C.shape[0]
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    w = [1.0 if i == j else np.sqrt(2.0) for i, j in pairs]
    return np.array([[C[i, j, k, l] * w[a] * w[b] for b, (k, l) in enumerate(pairs)]
                     for a, (i, j) in enumerate(pairs)])


# --------------------------------------------------------------------------
# pullbacks to the fixed reference configuration
# --------------------------------------------------------------------------
def inv_det(F):
    """Inverse and determinant of stacked 2x2 or 3x3 matrices (closed form)."""
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    if d == 2:
        a, b, c, e = F[..., 0, 0], F[..., 0, 1], F[..., 1, 0], F[..., 1, 1]
        J = a * e - b * c
        inv = np.stack([np.stack([e, -b], -1), np.stack([-c, a], -1)], -2) / J[..., None, None]
        return inv, J
    if d == 3:
        cof = np.cross(F[..., [1, 2, 0], :], F[..., [2, 0, 1], :])  # rows: cofactors
        J = np.einsum("...i,...i->...", F[..., 0, :], cof[..., 0, :])
        return np.swapaxes(cof, -1, -2) / J[..., None, None], J
    return np.linalg.inv(F), np.linalg.det(F)


def pullback_conductivity(K, F):
    """``J F^-1 K F^-T`` for stacked deformation gradients."""
    Finv, J = inv_det(F)
    return J[..., None, None] * Finv @ K @ np.swapaxes(Finv, -1, -2)


def pullback_stiffness(C, F):
    """Minor-symmetrised pullback of the stiffness tensor.

    ``Chat[m,i,p,k] = J C[m,n,p,q] F^-1[i,n] F^-1[k,q]`` pairs the full
    reference gradients; the strain-based form keeps its average over the
    index swaps ``m<->i`` and ``p<->k``.
    """
    Finv, J = inv_det(F)
    Ch = J[..., None, None, None, None] * np.einsum("mnpq,...in,...kq->...mipk", C, Finv, Finv, optimize=True)
    Ch = 0.5 * (Ch + np.swapaxes(Ch, -4, -3))
    Ch = 0.5 * (Ch + np.swapaxes(Ch, -2, -1))
    return Ch


def pullback_coupling(a, F):
    """``J a F^-T`` (expansion or dissipation matrix paired with a reference gradient)."""
    Finv, J = inv_det(F)
    return J[..., None, None] * a @ np.swapaxes(Finv, -1, -2)


def pullback_velocity(v, F):
    return np.einsum("...ij,...j->...i", inv_det(F)[0], v)


def pullback_capacity(c, F):
    return c * inv_det(F)[1]
