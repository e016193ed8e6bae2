"""Problem description shared by the eps-problem and the two-scale model.

Source terms are given directly in the fixed reference configuration as
functions ``f(t, x, y)`` of time, macro point and cell point; the
eps-problem evaluates them at ``(t, x, {x/eps})``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import CellGeometry, DeformationMap
from .material import MaterialParameters

Source = Callable[[object, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class ProblemData:
    """Initial temperature and sources.

    ``theta0_A(x)`` is the macroscopic initial temperature and
    ``theta0_B(x, y)`` the initial temperature inside the inclusion; the two
    must agree on the interface.  Displacement sources return ``(..., dim)``.
    """

    theta0_A: Callable | None = None
    theta0_B: Callable | None = None
    f_u_A: Source | None = None
    f_u_B: Source | None = None
    f_theta_A: Source | None = None
    f_theta_B: Source | None = None

    def sources(self):
        return dict(f_u_A=self.f_u_A, f_u_B=self.f_u_B, f_theta_A=self.f_theta_A, f_theta_B=self.f_theta_B)

    def scaled(self, lam: float) -> "ProblemData":
        def sc(f):
            return None if f is None else (lambda *a, _f=f: lam * np.asarray(_f(*a)))

        return ProblemData(sc(self.theta0_A), sc(self.theta0_B), sc(self.f_u_A), sc(self.f_u_B),
                           sc(self.f_theta_A), sc(self.f_theta_B))

    def __add__(self, other: "ProblemData") -> "ProblemData":
        def add(f, g):
            if f is None:
                return g
            if g is None:
                return f
            return lambda *a: np.asarray(f(*a)) + np.asarray(g(*a))

        return ProblemData(*(add(getattr(self, k), getattr(other, k)) for k in
                             ("theta0_A", "theta0_B", "f_u_A", "f_u_B", "f_theta_A", "f_theta_B")))


@dataclass
class Problem:
    geometry: CellGeometry
    smap: DeformationMap
    material: MaterialParameters
    data: ProblemData = field(default_factory=ProblemData)
    omega: list = field(default_factory=lambda: [(0.0, 1.0), (0.0, 1.0)])
    T: float = 0.25
    n_steps: int = 64

    @property
    def dim(self):
        return self.geometry.dim

    @property
    def dt(self):
        return self.T / self.n_steps if self.n_steps else 0.0

    def times(self):
        return np.linspace(0.0, self.T, self.n_steps + 1)

    def level_set(self):
        return self.geometry.inclusion


def eval_source(f, t, x, y, shape=()):
    """Evaluate an optional source, returning zeros of the right shape when absent."""
    lead = np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1])
    if f is None:
        return np.zeros(lead + tuple(shape))
    return np.broadcast_to(np.asarray(f(t, x, y), dtype=float), lead + tuple(shape))
