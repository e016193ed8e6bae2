"""Flat ``section.key = value`` study configuration.

One assignment per line; ``#`` starts a comment.  Lists are comma
separated, vector-valued expressions separate their components with
``;``, and numbers may be written as fractions (``1/16``).  Every key has a
default (see :data:`DEFAULTS`); unknown keys are rejected so that typos do
not silently fall back to defaults.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import expr as ex
from .geometry import CellGeometry, circle, ellipse, make_map, map_from_expressions, no_inclusion
from .material import COUPLING_MODES, MaterialParameters
from .mesh import generate_cell_mesh
from .problem import Problem, ProblemData


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "study.name": "weakly-coupled",
    "study.eps": "1/4, 1/8, 1/16",
    "study.T": "0.25",
    "study.steps": "64",
    "study.seed": "0",
    "study.out": "study-out",
    "study.jobs": "1",
    "domain.omega": "0:1, 0:1",
    "geometry.inclusion": "circle",
    "geometry.radius": "0.25",
    "geometry.semi_axes": "0.3, 0.2",
    "geometry.center": "0.5, 0.5",
    "geometry.clearance": "0.2",
    "map.preset": "radial-growth",
    "map.amplitude": "0.4",
    "map.variation": "0.5",
    "map.r_inner": "0.2",
    "map.r_outer": "0.4",
    "map.components": "",
    "material.coupling_mode": "no_dissipation",
    "material.lambda": "1, 1",
    "material.mu": "1, 1",
    "material.k": "1, 1",
    "material.alpha": "0.5, 0.5",
    "material.gamma": "0.5, 0.5",
    "material.rho": "1, 1",
    "material.cd": "1, 1",
    "material.L_AB": "0.1",
    "data.theta0_A": "sin(pi*x0)*sin(pi*x1)",
    "data.theta0_B": "sin(pi*x0)*sin(pi*x1)",
    "data.f_u_A": "1; 0",
    "data.f_u_B": "0; 0",
    "data.f_theta_A": "1",
    "data.f_theta_B": "0",
    "mesh.cell_h": "1/32",
    "mesh.n_macro": "128",
    "mesh.micro_stride": "4",
    "twoscale.coupling": "condensed",
    "twoscale.sweeps": "1",
    "solver.tol": "1e-10",
    "acceptance.slope_min": "0.4",
    "acceptance.slope_max": "1.2",
    "acceptance.lemma_slope": "0.85",
    "acceptance.uniform_factor": "2",
    "output.svg": "true",
}

INCLUSIONS = ("circle", "ellipse", "none")


def parse_text(text: str) -> dict:
    """Raw ``{key: value}`` pairs from config text."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[key] = value
    return out


def _number(s, key):
    try:
        return float(Fraction(s.strip()))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{key}: {s!r} is not a number") from None


def _numbers(s, key):
    return [_number(v, key) for v in s.split(",") if v.strip()]


def _pair(s, key):
    vals = _numbers(s, key)
    if len(vals) != 2:
        raise ConfigError(f"{key}: expected 'phase A, phase B'")
    return tuple(vals)


def _bool(s, key):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: {s!r} is not a boolean")


@dataclass
class StudyConfig:
    """Resolved configuration: ``values`` holds every key as text."""

    values: dict

    @classmethod
    def from_text(cls, text: str, **overrides) -> "StudyConfig":
        vals = dict(DEFAULTS)
        vals.update(parse_text(text))
        for k, v in overrides.items():
            key = k.replace("__", ".")
            if key not in DEFAULTS:
                raise ConfigError(f"unknown key {key!r}")
            vals[key] = str(v)
        cfg = cls(vals)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, **overrides) -> "StudyConfig":
        return cls.from_text(Path(path).read_text(), **overrides)

    def get(self, key):
        return self.values[key]

    def resolved(self) -> dict:
        return dict(sorted(self.values.items()))

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.resolved().items())

    # -- typed views --------------------------------------------------------
    def num(self, key):
        return _number(self.values[key], key)

    def integer(self, key):
        v = self.num(key)
        if v != int(v):
            raise ConfigError(f"{key}: expected an integer")
        return int(v)

    @property
    def eps_list(self):
        return _numbers(self.values["study.eps"], "study.eps")

    @property
    def omega(self):
        out = []
        for part in self.values["domain.omega"].split(","):
            try:
                lo, hi = part.split(":")
            except ValueError:
                raise ConfigError("domain.omega: expected 'lo:hi, lo:hi'") from None
            out.append((_number(lo, "domain.omega"), _number(hi, "domain.omega")))
        return out

    @property
    def dim(self):
        return len(self.omega)

    @property
    def coupling_mode(self):
        return self.values["material.coupling_mode"]

    @property
    def seed(self):
        return self.integer("study.seed")

    @property
    def svg(self):
        return _bool(self.values["output.svg"], "output.svg")

    def validate(self):
        mode = self.coupling_mode
        if mode not in COUPLING_MODES:
            raise ConfigError(f"material.coupling_mode must be one of {COUPLING_MODES}")
        eps = self.eps_list
        if not eps:
            raise ConfigError("study.eps is empty")
        if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("study.eps must be positive and strictly decreasing")
        for lo, hi in self.omega:
            if hi <= lo:
                raise ConfigError("domain.omega: empty interval")
            for e in eps:
                q = (hi - lo) / e
                if abs(q - round(q)) > 1e-9:
                    raise ConfigError(f"eps={e} does not divide the side {hi - lo}")
        if self.dim not in (2, 3):
            raise ConfigError("domain.omega must describe a 2D or 3D box")
        if self.values["geometry.inclusion"] not in INCLUSIONS:
            raise ConfigError(f"geometry.inclusion must be one of {INCLUSIONS}")
        if self.values["twoscale.coupling"] not in ("condensed", "staggered"):
            raise ConfigError("twoscale.coupling must be 'condensed' or 'staggered'")
        if self.num("study.T") < 0 or self.integer("study.steps") < 0:
            raise ConfigError("study.T and study.steps must be non-negative")
        for key in ("mesh.n_macro", "mesh.micro_stride"):
            if self.integer(key) < 1:
                raise ConfigError(f"{key} must be positive")
        if self.integer("mesh.n_macro") % self.integer("mesh.micro_stride"):
            raise ConfigError("mesh.micro_stride must divide mesh.n_macro")
        h = self.num("mesh.cell_h")
        if not 0 < h <= 0.5:
            raise ConfigError("mesh.cell_h must lie in (0, 1/2]")
        self.svg  # noqa: B018 - validates the flag
        for key in ("data.theta0_A", "data.theta0_B", "data.f_theta_A", "data.f_theta_B"):
            self._scalar_expr(key)
        for key in ("data.f_u_A", "data.f_u_B"):
            self._vector_expr(key)
        self.material()
        self.geometry()
        self.deformation_map()

    # -- builders -----------------------------------------------------------
    def _scalar_expr(self, key):
        try:
            return ex.parse(self.values[key], self.dim)
        except ex.ExpressionError as exc:
            raise ConfigError(f"{key}: {exc}") from None

    def _vector_expr(self, key):
        parts = [p for p in self.values[key].split(";")]
        if len(parts) != self.dim:
            raise ConfigError(f"{key}: expected {self.dim} components separated by ';'")
        try:
            return [ex.parse(p, self.dim) for p in parts]
        except ex.ExpressionError as exc:
            raise ConfigError(f"{key}: {exc}") from None

    def geometry(self) -> CellGeometry:
        d = self.dim
        kind = self.values["geometry.inclusion"]
        center = _numbers(self.values["geometry.center"], "geometry.center")
        if kind == "circle":
            ls = circle(d, self.num("geometry.radius"), center)
        elif kind == "ellipse":
            ls = ellipse(d, _numbers(self.values["geometry.semi_axes"], "geometry.semi_axes"), center)
        else:
            ls = no_inclusion(d)
        return CellGeometry(d, ls, self.num("geometry.clearance"))

    def deformation_map(self):
        d = self.dim
        preset = self.values["map.preset"]
        if preset == "expression":
            comps = [c for c in self.values["map.components"].split(";") if c.strip()]
            if len(comps) != d:
                raise ConfigError(f"map.components: expected {d} components separated by ';'")
            try:
                return map_from_expressions(comps, d, clearance=self.num("geometry.clearance"))
            except ex.ExpressionError as exc:
                raise ConfigError(f"map.components: {exc}") from None
        if preset == "radial-growth":
            return make_map(preset, d, amplitude=self.num("map.amplitude"),
                            variation=self.num("map.variation"), r_inner=self.num("map.r_inner"),
                            r_outer=self.num("map.r_outer"))
        try:
            return make_map(preset, d)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def material(self) -> MaterialParameters:
        v = self.values
        pair = {k: _pair(v[f"material.{k}"], f"material.{k}")
                for k in ("lambda", "mu", "k", "alpha", "gamma", "rho", "cd")}
        try:
            return MaterialParameters.isotropic(
                self.dim, lam=pair["lambda"], mu=pair["mu"], k=pair["k"], alpha=pair["alpha"],
                gamma=pair["gamma"], rho=pair["rho"], cd=pair["cd"], L_AB=self.num("material.L_AB"),
                coupling_mode=self.coupling_mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def data(self) -> ProblemData:
        d = self.dim

        def scalar(key):
            e = self._scalar_expr(key)
            return None if e == 0 else ex.compile_scalar(e, d)

        def vector(key):
            comps = self._vector_expr(key)
            return None if all(c == 0 for c in comps) else ex.compile_vector(comps, d)

        th_A, th_B = scalar("data.theta0_A"), scalar("data.theta0_B")
        theta0_A = None if th_A is None else (lambda x, _f=th_A: _f(0.0, x, np.zeros_like(x)))
        theta0_B = None if th_B is None else (lambda x, y, _f=th_B: _f(0.0, x, y))
        return ProblemData(theta0_A, theta0_B, vector("data.f_u_A"), vector("data.f_u_B"),
                           scalar("data.f_theta_A"), scalar("data.f_theta_B"))

    def problem(self) -> Problem:
        return Problem(self.geometry(), self.deformation_map(), self.material(), self.data(),
                       omega=self.omega, T=self.num("study.T"), n_steps=self.integer("study.steps"))

    def cell_mesh(self):
        return generate_cell_mesh(self.geometry(), self.num("mesh.cell_h"))
