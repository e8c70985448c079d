"""Case configuration: a dataclass plus an INI-style loader.

Example file::

    [mesh]
    nx = 16
    ny = 16

    [problem]
    case = M1
    k1 = 1
    k2 = 10

    [flux]
    method = irt0
"""
import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..errors import InvalidArgument
from .manufactured import CASES, DEFAULT_ALPHA

FLUXES = ("rt0", "rt1", "irt0")
JUMP_DOMAINS = ("interface", "cell", "trace")


def _floats(text):
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


def _points(text):
    """``x0, y0; x1, y1; ...`` -> tuple of pairs."""
    pts = []
    for item in text.split(";"):
        if item.strip():
            xy = _floats(item)
            if len(xy) != 2:
                raise InvalidArgument(f"interface point {item!r} needs two coordinates")
            pts.append(xy)
    return tuple(pts)


def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise InvalidArgument(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class CaseConfig:
    """One experiment. ``offset`` places a vertical interface at ``delta * h``
    to the right of the mesh line nearest ``x = 1/2`` (overrides ``alpha``)."""

    nx: int = 16
    ny: int = None
    rect: tuple = (0.0, 1.0, 0.0, 1.0)
    mesh_file: str = None
    case: str = "M1"
    alpha: float = None
    offset: float = None
    interface_points: tuple = None
    sources: tuple = field(default=None, compare=False)
    k1: float = 1.0
    k2: float = 10.0
    gamma: float = 10.0
    beta: float = 0.1
    flux: str = "irt0"
    solver_tol: float = 1e-11
    jump_domain: str = "interface"
    levels: tuple = (8, 16, 32, 64)
    contrasts: tuple = (1e-3, 1.0, 1e3)
    offsets: tuple = (0.3, 1e-3, 1e-6)
    out: str = None
    vtk: bool = True
    vtk_clipped: bool = True
    dump_matrix: bool = False

    def __post_init__(self):
        if self.ny is None:
            object.__setattr__(self, "ny", self.nx)

    @property
    def h(self):
        return (self.rect[1] - self.rect[0]) / self.nx

    @property
    def manufactured(self):
        return self.sources is None and self.interface_points is None

    def interface_alpha(self):
        """Reference abscissa of the manufactured interface."""
        if self.offset is None:
            return DEFAULT_ALPHA if self.alpha is None else self.alpha
        x0, x1 = self.rect[:2]
        line = x0 + round(0.5 * self.nx) * self.h
        return line + self.offset * self.h

    def with_(self, **kw):
        return replace(self, **kw)

    def validate(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 1 or self.ny < 1:
            raise InvalidArgument(f"mesh cell counts must be positive integers, got {self.nx}x{self.ny}")
        if len(self.rect) != 4 or not (self.rect[1] > self.rect[0] and self.rect[3] > self.rect[2]):
            raise InvalidArgument(f"invalid rectangle {self.rect}")
        if self.case not in CASES and self.manufactured:
            raise InvalidArgument(f"unknown case {self.case!r}; expected one of {CASES}")
        if self.manufactured and self.case != "M0" and tuple(self.rect) != (0.0, 1.0, 0.0, 1.0):
            raise InvalidArgument("manufactured cases M1/M2 live on the unit square")
        if self.manufactured and self.mesh_file and self.case != "M0":
            raise InvalidArgument("manufactured cases M1/M2 need the structured unit-square mesh")
        if self.interface_points is not None and len(self.interface_points) < 2:
            raise InvalidArgument("an interface polyline needs at least two points")
        if not (self.k1 > 0 and self.k2 > 0):
            raise InvalidArgument(f"diffusivities must be positive, got {self.k1}, {self.k2}")
        if not (self.gamma > 0 and self.beta > 0):
            raise InvalidArgument(f"penalty parameters must be positive, got {self.gamma}, {self.beta}")
        if self.flux not in FLUXES:
            raise InvalidArgument(f"unknown flux {self.flux!r}; expected one of {FLUXES}")
        if self.jump_domain not in JUMP_DOMAINS:
            raise InvalidArgument(f"unknown jump domain {self.jump_domain!r}")
        if not 0 < self.solver_tol < 1:
            raise InvalidArgument(f"solver tolerance must lie in (0, 1), got {self.solver_tol}")
        if not self.levels or any(int(n) != n or n < 1 for n in self.levels):
            raise InvalidArgument(f"invalid refinement levels {self.levels}")
        if any(c <= 0 for c in self.contrasts):
            raise InvalidArgument(f"contrasts must be positive, got {self.contrasts}")
        if self.offset is not None and not np.isfinite(self.offset):
            raise InvalidArgument(f"invalid interface offset {self.offset}")
        return self


_SCHEMA = {
    "mesh": {"nx": int, "ny": int, "rect": _floats, "file": str},
    "interface": {"alpha": float, "offset": float, "points": _points},
    "problem": {"case": str, "k1": float, "k2": float, "gamma": float, "beta": float},
    "flux": {"method": str},
    "solver": {"tol": float},
    "estimators": {"jump_domain": str},
    "study": {"levels": _ints},
    "sweep": {"contrasts": _floats, "offsets": _floats},
    "output": {"vtk": _bool, "vtk_clipped": _bool, "dump_matrix": _bool},
}

_FIELD = {
    ("mesh", "file"): "mesh_file", ("interface", "points"): "interface_points",
    ("flux", "method"): "flux", ("solver", "tol"): "solver_tol",
}


def load_config(path, **overrides):
    """Read an INI file; unknown sections or keys are rejected."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";;"))
    path = Path(path)
    if not path.is_file():
        raise InvalidArgument(f"config file {path} does not exist")
    parser.read(path)
    values = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise InvalidArgument(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            conv = _SCHEMA[section].get(key)
            if conv is None:
                raise InvalidArgument(f"{path}: unknown key {key!r} in [{section}]")
            try:
                values[_FIELD.get((section, key), key)] = conv(raw)
            except ValueError as exc:
                raise InvalidArgument(f"{path}: bad value for {section}.{key}: {raw!r}") from exc
    names = {f.name for f in fields(CaseConfig)}
    values.update({k: v for k, v in overrides.items() if v is not None and k in names})
    return CaseConfig(**values).validate()
