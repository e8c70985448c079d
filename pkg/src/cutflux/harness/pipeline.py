"""Experiment pipeline: classify -> primal -> multipliers -> flux -> audits -> estimators."""
import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..cutfem import ProblemData, energy_error, l2_error, solve_primal
from ..cutgeom import InterfacePolyline, classify
from ..errors import CutFluxError, DegenerateCut
from ..estimators import estimate
from ..flux_irt import (conservation_audit_irt, reconstruct_irt, transmission_audit,
                        write_irt_audit_csv)
from ..flux_rt import (conservation_audit_rt, extended_sources, interface_jump_rt,
                       reconstruct_rt, write_rt_audit_csv)
from ..mesh import build_structured_mesh, read_mesh, write_mesh
from ..multipliers import (build_multiplier, constraint_defect, identity_defect, kernel_defect,
                           write_patch_csv)
from .manufactured import manufactured
from .vtk import export_vtk

CONSERVATION_TOL = 1e-8
TRANSMISSION_TOL = 1e-10
IDENTITY_TOL = 1e-8
CONSTRAINT_TOL = 1e-9
KERNEL_TOL = 0.0
ENERGY_RATE = (0.85, 1.15)
L2_RATE = (1.7, 2.3)
EFFECTIVITY_RANGE = (0.8, 25.0)
LEVEL_SPREAD = 2.0
SWEEP_SPREAD = 5.0
RATE_LEVELS = 3


class StageFailure(CutFluxError):
    """A module error, tagged with the pipeline stage that raised it."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Audit:
    name: str
    value: float
    tol: float
    asserted: bool = True

    @property
    def passed(self):
        if not self.asserted:
            return True
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def as_dict(self):
        return {"value": self.value, "tol": self.tol, "asserted": self.asserted,
                "passed": self.passed}


@dataclass(eq=False)
class CaseResult:
    config: object
    n_dofs: int
    n_cut: int
    energy_error: float
    l2_error: float
    report: object
    audits: dict
    iterations: int
    wall_time: float
    stage_times: dict
    topology: object = field(default=None, repr=False)
    primal: object = field(default=None, repr=False)
    multiplier: object = field(default=None, repr=False)
    flux: object = field(default=None, repr=False)
    extras: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self):
        return all(a.passed for a in self.audits.values())

    def audit_max(self, name):
        return self.audits[name].value

    def summary(self):
        c = self.config
        return {
            "case": c.case if c.manufactured else "custom",
            "flux": c.flux,
            "nx": c.nx, "ny": c.ny, "h": c.h,
            "k1": c.k1, "k2": c.k2, "gamma": c.gamma, "beta": c.beta,
            "alpha": c.interface_alpha() if c.manufactured else None,
            "n_dofs": self.n_dofs,
            "n_cut_cells": self.n_cut,
            "iterations": self.iterations,
            "energy_error": self.energy_error,
            "l2_error": self.l2_error,
            "estimators": self.report.summary(),
            "audits": {k: a.as_dict() for k, a in self.audits.items()},
            "passed": self.passed,
            "wall_time": self.wall_time,
            "stage_times": self.stage_times,
        }


class _Stages:
    def __init__(self):
        self.times = {}

    def run(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        except StageFailure:
            raise
        except (CutFluxError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise StageFailure(name, exc) from exc
        finally:
            self.times[name] = time.perf_counter() - t0


def _problem(config):
    """(mesh, interface, data, exact case or None)."""
    if config.mesh_file:
        mesh = read_mesh(config.mesh_file)
    else:
        mesh = build_structured_mesh(config.nx, config.ny, config.rect)
    kw = dict(gamma=config.gamma, beta=config.beta)
    if config.manufactured:
        mc = manufactured(config.case, config.k1, config.k2, config.interface_alpha())
        f = (None, None) if mc.trivial else mc.f
        return mesh, mc.interface, ProblemData(config.k1, config.k2, f[0], f[1], **kw), mc
    iface = InterfacePolyline(config.interface_points)
    f = config.sources or (None, None)
    return mesh, iface, ProblemData(config.k1, config.k2, f[0], f[1], **kw), None


def _rel(value, scale):
    return value / scale if scale > 0 else value


def run_case(config):
    """Run one configuration through every stage and collect the audits."""
    config.validate()
    st = _Stages()
    t0 = time.perf_counter()
    mesh, iface, data, exact = st.run("setup", _problem, config)
    topo = st.run("classify", classify, mesh, iface)
    u = st.run("primal", solve_primal, topo, data, tol=config.solver_tol)
    theta = st.run("multipliers", build_multiplier, u, check=False)
    audits = {
        "multiplier_identity": Audit("multiplier_identity", identity_defect(theta, u), IDENTITY_TOL),
        "multiplier_constraint": Audit("multiplier_constraint", constraint_defect(theta, topo),
                                       CONSTRAINT_TOL),
        "multiplier_kernel": Audit("multiplier_kernel", kernel_defect(u), KERNEL_TOL),
    }
    extras = {}
    if config.flux == "irt0":
        sigma = st.run("flux", reconstruct_irt, u, theta)
        cons = conservation_audit_irt(sigma, topo, data)
        trans = transmission_audit(sigma, topo)
        audits["conservation"] = Audit("conservation", _rel(cons.max, cons.scale), CONSERVATION_TOL)
        audits["transmission"] = Audit("transmission", _rel(trans.interface_jump, trans.scale),
                                       TRANSMISSION_TOL)
        audits["edge_continuity"] = Audit("edge_continuity", _rel(trans.edge_jump, trans.scale),
                                          TRANSMISSION_TOL)
        extras["irt_audits"] = (cons, trans)
        extras["basis_condition"] = max((b.condition for b in sigma.bases.values()), default=1.0)
    else:
        m = int(config.flux[-1])
        sigma = st.run("flux", reconstruct_rt, u, theta, m=m)
        f_ext = st.run("flux", extended_sources, u, m=m)
        cons = [conservation_audit_rt(s, f_ext, topo, data) for s in sigma]
        worst = max(_rel(a.max, a.scale) for a in cons)
        audits["conservation"] = Audit("conservation", worst, CONSERVATION_TOL)
        jump = interface_jump_rt(sigma[0], sigma[1], topo)
        # the subdomain fluxes are not expected to match across the interface
        audits["transmission"] = Audit("transmission", jump, TRANSMISSION_TOL, asserted=False)
        extras["rt_audits"] = cons
    grad = exact.grad if exact is not None else None
    report = st.run("estimators", estimate, sigma, u, topo, data, exact_grad=grad,
                    jump_domain=config.jump_domain)
    e1 = e0 = None
    if exact is not None:
        e1 = energy_error(exact.grad, u, topo, data)
        e0 = l2_error(exact.u, u, topo)
    return CaseResult(config, int(u.dofmap.n_dofs), int(topo.cut_tris.size), e1, e0, report,
                      audits, int(u.info.get("iterations", 0)), time.perf_counter() - t0,
                      st.times, topo, u, theta, sigma, extras)


# ----------------------------------------------------------------------------
# outputs
# ----------------------------------------------------------------------------

def _cell_flux(result):
    """(2, T, 2) flux of each phase at the triangle centroids."""
    mesh = result.topology.mesh
    cen = mesh.centroids()
    tri = np.arange(mesh.n_triangles)
    out = np.zeros((2, mesh.n_triangles, 2))
    for i in range(2):
        if isinstance(result.flux, (tuple, list)):
            out[i] = result.flux[i].value(tri, cen)
        else:
            out[i] = result.flux.value(tri, cen, np.full(tri.size, i))
    return out


def case_fields(result):
    topo, u = result.topology, result.primal
    return {
        "u": np.stack([u.nodal(0), u.nodal(1)]),
        "flux": _cell_flux(result),
        "eta_T": result.report.eta_T,
        "cell_phase": topo.tri_phase.astype(float),
    }


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_case_outputs(result, out):
    """summary.json, patches.csv, audit.csv, estimators.csv, mesh/interface text,
    optional matrix dump and VTK."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    summary = result.summary()
    summary["wall_time"] = None  # keep the file reproducible; timings go to the console
    summary["stage_times"] = None
    write_json(summary, out / "summary.json")
    write_patch_csv(result.multiplier, out / "patches.csv")
    if cfg.flux == "irt0":
        cons, trans = result.extras["irt_audits"]
        write_irt_audit_csv(cons, trans, result.flux, out / "audit.csv")
    else:
        write_rt_audit_csv(result.extras["rt_audits"], result.topology, out / "audit.csv")
    result.report.write_csv(out / "estimators.csv")
    write_mesh(result.topology.mesh, out / "mesh.txt")
    result.topology.interface.write(out / "interface.txt")
    if cfg.dump_matrix:
        result.primal.system.A.dump(out / "matrix.txt")
    if cfg.vtk:
        export_vtk(result.topology.mesh, case_fields(result), out / "solution.vtk")
        if cfg.vtk_clipped:
            export_vtk(result.topology.mesh, case_fields(result), out / "solution_clipped.vtk",
                       topology=result.topology, clipped=True)
    return out


# ----------------------------------------------------------------------------
# studies
# ----------------------------------------------------------------------------

def fit_rate(h, err):
    """Least-squares slope of log(err) against log(h)."""
    h = np.asarray(h, float)
    err = np.asarray(err, float)
    if h.size < 2 or np.any(err <= 0):
        return float("nan")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


@dataclass
class Check:
    name: str
    value: float
    bounds: tuple

    @property
    def passed(self):
        lo, hi = self.bounds
        return bool(np.isfinite(self.value) and lo <= self.value <= hi)


@dataclass(eq=False)
class ConvergenceTable:
    results: list
    energy_rate: float
    l2_rate: float
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks) and all(r.passed for r in self.results)

    def rows(self):
        out = []
        for r in self.results:
            rep = r.report
            out.append({
                "nx": r.config.nx, "h": r.config.h, "dofs": r.n_dofs,
                "energy_error": r.energy_error, "l2_error": r.l2_error,
                "eta": rep.eta, "eta_gamma": rep.eta_gamma, "epsilon": rep.epsilon,
                "effectivity": rep.effectivity,
                "conservation": r.audits["conservation"].value,
                "transmission": r.audits["transmission"].value,
                "multiplier_identity": r.audits["multiplier_identity"].value,
                "multiplier_constraint": r.audits["multiplier_constraint"].value,
                "audits_passed": r.passed,
            })
        return out

    def summary(self):
        return {"energy_rate": self.energy_rate, "l2_rate": self.l2_rate,
                "checks": {c.name: {"value": c.value, "bounds": list(c.bounds),
                                    "passed": c.passed} for c in self.checks},
                "passed": self.passed}


def _write_rows(rows, path):
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6e}" if isinstance(v, float) else v) for k, v in row.items()})


def _spread(values):
    v = [x for x in values if x is not None and np.isfinite(x) and x > 0]
    return max(v) / min(v) if v else float("nan")


def convergence_study(config, levels=None):
    """Run the case on ``levels`` structured meshes and fit observed rates over
    the last three levels."""
    levels = tuple(config.levels if levels is None else levels)
    results = [run_case(config.with_(nx=n, ny=n)) for n in levels]
    tail = results[-RATE_LEVELS:]
    h = [r.config.h for r in tail]
    checks = []
    er = l2r = float("nan")
    if config.manufactured and config.case != "M0":
        er = fit_rate(h, [r.energy_error for r in tail])
        l2r = fit_rate(h, [r.l2_error for r in tail])
        eff = [r.report.effectivity for r in results]
        checks = [
            Check("energy_rate", er, ENERGY_RATE),
            Check("l2_rate", l2r, L2_RATE),
            Check("effectivity_min", min(eff), EFFECTIVITY_RANGE),
            Check("effectivity_max", max(eff), EFFECTIVITY_RANGE),
            Check("effectivity_level_spread", _spread(eff), (1.0, LEVEL_SPREAD)),
        ]
    return ConvergenceTable(results, er, l2r, checks)


def write_convergence_outputs(table, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(table.rows(), out / "convergence.csv")
    write_json(table.summary(), out / "convergence_summary.json")
    return out


@dataclass(eq=False)
class SweepTable:
    rows: list
    checks: list

    @property
    def passed(self):
        ok = all(r["status"] in ("ok", "degenerate_cut") and r["audits_passed"] for r in self.rows)
        return ok and all(c.passed for c in self.checks)

    def summary(self):
        return {"points": len(self.rows),
                "degenerate": sum(r["status"] == "degenerate_cut" for r in self.rows),
                "failed": sum(not r["audits_passed"] or r["status"] == "error" for r in self.rows),
                "checks": {c.name: {"value": c.value, "bounds": list(c.bounds),
                                    "passed": c.passed} for c in self.checks},
                "passed": self.passed}


def robustness_sweep(config, contrasts=None, offsets=None):
    """Grid over k2/k1 and interface offsets (in units of h) from a mesh line."""
    contrasts = tuple(config.contrasts if contrasts is None else contrasts)
    offsets = tuple(config.offsets if offsets is None else offsets)
    rows = []
    for c in contrasts:
        for d in offsets:
            cfg = config.with_(k2=config.k1 * c, offset=d)
            row = {"contrast": c, "offset": d, "nx": cfg.nx, "status": "ok", "message": "",
                   "iterations": 0, "conservation": float("nan"),
                   "transmission": float("nan"), "multiplier_identity": float("nan"),
                   "multiplier_constraint": float("nan"), "effectivity": float("nan"),
                   "audits_passed": True}
            try:
                r = run_case(cfg)
            except StageFailure as exc:
                degenerate = isinstance(exc.cause, DegenerateCut)
                row.update(status="degenerate_cut" if degenerate else "error",
                           message=str(exc), audits_passed=degenerate)
                rows.append(row)
                continue
            eff = r.report.effectivity
            row.update(iterations=r.iterations,
                       conservation=r.audits["conservation"].value,
                       transmission=r.audits["transmission"].value,
                       multiplier_identity=r.audits["multiplier_identity"].value,
                       multiplier_constraint=r.audits["multiplier_constraint"].value,
                       effectivity=float("nan") if eff is None else eff,
                       audits_passed=r.passed)
            rows.append(row)
    checks = []
    if config.manufactured and config.case != "M0":
        eff = [r["effectivity"] for r in rows if r["status"] == "ok"]
        checks.append(Check("effectivity_sweep_spread", _spread(eff), (1.0, SWEEP_SPREAD)))
    return SweepTable(rows, checks)


def write_sweep_outputs(table, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(table.rows, out / "sweep.csv")
    write_json(table.summary(), out / "sweep_summary.json")
    return out
