"""Manufactured two-phase solutions on the unit square.

Every case satisfies u = 0 on the outer boundary, [u] = 0 and
[k grad u . n] = 0 on the interface; sources are f^i = -k_i lap u^i, derived
symbolically.

* M0: f = 0, u = 0, vertical interface x = alpha.
* M1: vertical interface x = alpha,
  u^1 = x (x - alpha) sin(pi y) / k1,
  u^2 = alpha / (k2 (alpha - 1)) (x - alpha)(x - 1) sin(pi y).
* M2: tilted interface x = s(y) = alpha + 0.1 (y - 1/2),
  u^1 = (x - s) x (s - 1) sin(pi y) / k1,
  u^2 = (x - s)(x - 1) s sin(pi y) / k2.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy as sp

from ..cutgeom import InterfacePolyline
from ..errors import InvalidArgument

CASES = ("M0", "M1", "M2")
DEFAULT_ALPHA = float(np.sqrt(2.0) / 2.0)
DEFAULT_K = (1.0, 10.0)
TILT = 0.1

X, Y = sp.symbols("x y", real=True)


@dataclass(frozen=True)
class ManufacturedCase:
    name: str
    k1: float
    k2: float
    alpha: float
    interface: InterfacePolyline
    u: tuple
    grad: tuple
    f: tuple
    exprs: tuple

    @property
    def trivial(self):
        return self.name == "M0"


def interface_abscissa(case_id, alpha):
    """Symbolic x-position of the interface as a function of y."""
    if case_id == "M2":
        return alpha + sp.Rational(1, 10) * (Y - sp.Rational(1, 2))
    return sp.sympify(alpha)


def symbolic_case(case_id, k1, k2, alpha):
    """Sympy expressions ``(u1, u2)`` of a case (floats kept exact where possible)."""
    if case_id not in CASES:
        raise InvalidArgument(f"unknown manufactured case {case_id!r}; expected one of {CASES}")
    a = sp.nsimplify(alpha) if case_id != "M0" else alpha
    k1s, k2s = sp.nsimplify(k1), sp.nsimplify(k2)
    if case_id == "M0":
        return sp.Integer(0), sp.Integer(0)
    if case_id == "M1":
        u1 = X * (X - a) * sp.sin(sp.pi * Y) / k1s
        u2 = a / (k2s * (a - 1)) * (X - a) * (X - 1) * sp.sin(sp.pi * Y)
        return u1, u2
    s = interface_abscissa("M2", a)
    u1 = (X - s) * X * (s - 1) * sp.sin(sp.pi * Y) / k1s
    u2 = (X - s) * (X - 1) * s * sp.sin(sp.pi * Y) / k2s
    return u1, u2


def _vectorise(expr):
    fn = sp.lambdify((X, Y), expr, "numpy")

    def call(x, y):
        x = np.asarray(x, float)
        return np.asarray(fn(x, np.asarray(y, float)), float) * np.ones_like(x)
    return call


def _grad(expr):
    gx, gy = _vectorise(sp.diff(expr, X)), _vectorise(sp.diff(expr, Y))

    def call(x, y):
        return gx(x, y), gy(x, y)
    return call


def _interface(case_id, alpha):
    if case_id == "M2":
        return InterfacePolyline([(alpha - TILT / 2, 0.0), (alpha + TILT / 2, 1.0)])
    return InterfacePolyline([(alpha, 0.0), (alpha, 1.0)])


@lru_cache(maxsize=64)
def _build(case_id, k1, k2, alpha):
    u1, u2 = symbolic_case(case_id, k1, k2, alpha)
    f1 = -k1 * (sp.diff(u1, X, 2) + sp.diff(u1, Y, 2))
    f2 = -k2 * (sp.diff(u2, X, 2) + sp.diff(u2, Y, 2))
    return ManufacturedCase(
        case_id, k1, k2, alpha, _interface(case_id, alpha),
        (_vectorise(u1), _vectorise(u2)), (_grad(u1), _grad(u2)),
        (_vectorise(f1), _vectorise(f2)), (u1, u2, f1, f2))


def manufactured(case_id, k1=None, k2=None, alpha=None):
    """Exact solution, gradients, sources and interface of a named case."""
    if case_id not in CASES:
        raise InvalidArgument(f"unknown manufactured case {case_id!r}; expected one of {CASES}")
    k1 = DEFAULT_K[0] if k1 is None else float(k1)
    k2 = DEFAULT_K[1] if k2 is None else float(k2)
    alpha = DEFAULT_ALPHA if alpha is None else float(alpha)
    if k1 <= 0 or k2 <= 0:
        raise InvalidArgument(f"diffusivities must be positive, got {k1}, {k2}")
    lo = TILT / 2 if case_id == "M2" else 0.0
    if not lo < alpha < 1.0 - lo:
        raise InvalidArgument(f"interface position {alpha} leaves the unit square")
    return _build(case_id, k1, k2, alpha)
