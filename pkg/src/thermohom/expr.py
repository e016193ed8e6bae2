"""Small expression language for user-supplied maps and data functions.

Expressions are plain arithmetic in the variables ``t``, ``x0..x2`` (macro
point) and ``y0..y2`` (cell point) with the functions ``sin cos tan exp log
sqrt abs min max`` and the constant ``pi``.  They are parsed once with sympy
and compiled to vectorised numpy callables; derivatives are taken
symbolically so that no finite differencing is needed downstream.
"""
from __future__ import annotations

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

T = sp.Symbol("t", real=True)
X = sp.symbols("x0 x1 x2", real=True)
Y = sp.symbols("y0 y1 y2", real=True)

_FUNCTIONS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "abs": sp.Abs,
    "min": sp.Min,
    "max": sp.Max,
    "pi": sp.pi,
}
_ALLOWED_FUNCS = (sp.sin, sp.cos, sp.tan, sp.exp, sp.log, sp.Abs, sp.Min, sp.Max, sp.Piecewise)


class ExpressionError(ValueError):
    pass


def parse(text: str, dim: int = 3) -> sp.Expr:
    """Parse ``text`` into a sympy expression, rejecting unknown names."""
    names = {"t": T}
    names.update({f"x{i}": X[i] for i in range(dim)})
    names.update({f"y{i}": Y[i] for i in range(dim)})
    names.update(_FUNCTIONS)
    try:
        expr = parse_expr(str(text), local_dict=names, global_dict={"Integer": sp.Integer,
                          "Float": sp.Float, "Rational": sp.Rational, "Symbol": sp.Symbol},
                          transformations=standard_transformations, evaluate=True)
    except Exception as exc:  # sympy raises a zoo of exception types
        raise ExpressionError(f"cannot parse {text!r}: {exc}") from exc
    expr = sp.sympify(expr)
    allowed = set(names.values())
    for sym in expr.free_symbols:
        if sym not in allowed:
            raise ExpressionError(f"unknown name {sym} in {text!r}")
    for f in expr.atoms(sp.Function):
        if not isinstance(f, _ALLOWED_FUNCS):
            raise ExpressionError(f"function {f.func} not allowed in {text!r}")
    return expr


def _broadcast(values, shape):
    return [np.broadcast_to(np.asarray(v, dtype=float), shape) for v in values]


class Compiled:
    """A list of scalar expressions compiled against ``(t, x, y)`` arrays.

    Calling with ``t`` (scalar or array), ``x`` of shape ``(..., dim)`` and
    ``y`` of shape ``(..., dim)`` returns an array of shape
    ``(...,) + self.shape``.
    """

    def __init__(self, exprs, shape, dim):
        self.shape = tuple(shape)
        self.dim = dim
        flat = [sp.sympify(e) for e in exprs]
        args = [T, *X[:dim], *Y[:dim]]
        self._fn = sp.lambdify(args, flat, modules="numpy", cse=True)
        self.exprs = flat

    def __call__(self, t, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        t = np.asarray(t, dtype=float)
        lead = np.broadcast_shapes(t.shape, x.shape[:-1], y.shape[:-1])
        with np.errstate(all="ignore"):
            out = self._fn(t, *np.moveaxis(x, -1, 0), *np.moveaxis(y, -1, 0))
        out = np.stack(_broadcast(out, lead), axis=-1)
        return out.reshape(lead + self.shape)


def compile_scalar(expr, dim):
    return Compiled([expr], (), dim)


def compile_matrix(mat: sp.Matrix, dim):
    return Compiled(list(mat), mat.shape, dim)


def compile_vector(vec, dim):
    vec = list(vec)
    return Compiled(vec, (len(vec),), dim)


def smoothstep(u):
    """C2 quintic ramp: 0 at u <= 0, 1 at u >= 1."""
    q = 6 * u**5 - 15 * u**4 + 10 * u**3
    return sp.Piecewise((0, u <= 0), (1, u >= 1), (q, True))
