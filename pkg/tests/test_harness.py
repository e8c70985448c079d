import csv
import json

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from cutflux.cutgeom import classify
from cutflux.errors import DegenerateCut, InvalidArgument
from cutflux.harness import (CaseConfig, StageFailure, convergence_study, export_vtk, fit_rate,
                             load_config, manufactured, read_vtk_counts, robustness_sweep,
                             run_case, write_case_outputs)
from cutflux.harness.cli import main
from cutflux.harness.manufactured import X, Y, interface_abscissa, symbolic_case
from cutflux.mesh import build_structured_mesh, mesh_from_arrays

from conftest import vertical

AUDITS = {"multiplier_identity", "multiplier_constraint", "multiplier_kernel", "conservation",
          "transmission"}


# ---------------------------------------------------------------- manufactured

@pytest.mark.parametrize("case", ["M1", "M2"])
@pytest.mark.parametrize("k", [(1, 10), (1, sp.Rational(1, 1000)), (3, 1000)])
def test_symbolic_transmission_and_boundary(case, k):
    k1, k2 = k
    u1, u2 = symbolic_case(case, float(k1), float(k2), np.sqrt(2) / 2)
    s = interface_abscissa(case, sp.nsimplify(np.sqrt(2) / 2))
    # [u] = 0 on x = s(y)
    assert sp.simplify((u1 - u2).subs(X, s)) == 0
    # [k grad u . n] = 0 with n proportional to (1, -s'(y))
    n = (1, -sp.diff(s, Y))
    flux = lambda u, kk: kk * (sp.diff(u, X) * n[0] + sp.diff(u, Y) * n[1])
    assert sp.simplify((flux(u1, sp.nsimplify(k1)) - flux(u2, sp.nsimplify(k2))).subs(X, s)) == 0
    # homogeneous boundary values
    assert sp.simplify(u1.subs(X, 0)) == 0 and sp.simplify(u2.subs(X, 1)) == 0
    for u in (u1, u2):
        assert sp.simplify(u.subs(Y, 0)) == 0 and sp.simplify(u.subs(Y, 1)) == 0


@pytest.mark.parametrize("case", ["M1", "M2"])
def test_numeric_callables_match_symbols(case):
    mc = manufactured(case, k1=2.0, k2=0.5)
    pts = np.random.default_rng(0).random((20, 2))
    for i in range(2):
        u = mc.exprs[i]
        k = (2.0, 0.5)[i]
        f = -k * (sp.diff(u, X, 2) + sp.diff(u, Y, 2))
        ff = sp.lambdify((X, Y), f, "numpy")
        gx = sp.lambdify((X, Y), sp.diff(u, X), "numpy")
        assert np.allclose(mc.f[i](pts[:, 0], pts[:, 1]), ff(pts[:, 0], pts[:, 1]), rtol=1e-12)
        assert np.allclose(mc.grad[i](pts[:, 0], pts[:, 1])[0], gx(pts[:, 0], pts[:, 1]), rtol=1e-12)


def test_m1_expected_form():
    a = np.sqrt(2) / 2
    mc = manufactured("M1", k1=1.0, k2=10.0)
    x, y = np.array([0.3, 0.9]), np.array([0.2, 0.6])
    ref1 = (x ** 2 - a * x) * np.sin(np.pi * y)
    ref2 = a / (10.0 * (a - 1)) * (x - a) * (x - 1) * np.sin(np.pi * y)
    assert np.allclose(mc.u[0](x, y), ref1) and np.allclose(mc.u[1](x, y), ref2)


def test_m0_and_unknown():
    mc = manufactured("M0")
    assert mc.trivial
    assert np.all(mc.u[0](np.ones(3), np.ones(3)) == 0.0)
    with pytest.raises(InvalidArgument):
        manufactured("M9")


# ---------------------------------------------------------------- config

def test_load_config(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[mesh]\nnx = 12\n[problem]\ncase = M2\nk2 = 1e3\n[flux]\nmethod = rt1\n"
                 "[sweep]\noffsets = 0.3, 1e-3\n[output]\nvtk = no\n")
    cfg = load_config(p)
    assert (cfg.nx, cfg.ny, cfg.case, cfg.k2, cfg.flux, cfg.offsets, cfg.vtk) == \
        (12, 12, "M2", 1e3, "rt1", (0.3, 1e-3), False)
    assert load_config(p, flux="irt0").flux == "irt0"


@pytest.mark.parametrize("text", [
    "[meshes]\nnx = 4\n", "[mesh]\nnz = 4\n", "[mesh]\nnx = four\n", "[flux]\nmethod = rt2\n",
    "[problem]\nk1 = -1\n", "[problem]\ncase = M7\n", "[output]\nvtk = maybe\n",
    "[estimators]\njump_domain = volume\n", "[mesh]\nnx = 0\n"])
def test_config_rejections(tmp_path, text):
    p = tmp_path / "bad.ini"
    p.write_text(text)
    with pytest.raises(InvalidArgument):
        load_config(p)


def test_config_missing_file(tmp_path):
    with pytest.raises(InvalidArgument):
        load_config(tmp_path / "nope.ini")


def test_pinned_configs_load():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.ini"))
    assert len(files) >= 3
    for f in files:
        load_config(f)


def test_offset_places_interface():
    cfg = CaseConfig(nx=8, offset=0.25)
    assert cfg.interface_alpha() == pytest.approx(0.5 + 0.25 / 8)


# ---------------------------------------------------------------- pipeline

@pytest.mark.parametrize("flux", ["irt0", "rt0", "rt1"])
def test_m0_everything_zero(flux):
    r = run_case(CaseConfig(nx=8, case="M0", flux=flux))
    assert set(r.audits) >= AUDITS
    assert all(a.value <= 1e-10 for a in r.audits.values())
    assert r.energy_error == 0.0 and r.l2_error == 0.0
    assert r.report.total == 0.0 and r.passed


def test_m1_irt_audits():
    r = run_case(CaseConfig(nx=16, flux="irt0"))
    assert r.passed and set(r.audits) >= AUDITS | {"edge_continuity"}
    assert r.audits["conservation"].value <= 1e-8
    assert r.audits["transmission"].value <= 1e-10


def test_m1_rt_reports_positive_jump():
    r = run_case(CaseConfig(nx=16, flux="rt0"))
    assert r.passed
    t = r.audits["transmission"]
    assert not t.asserted and t.value > 0


def test_stage_failure_names_stage():
    with pytest.raises(StageFailure) as err:
        run_case(CaseConfig(nx=8, offset=0.0))
    assert err.value.stage == "classify" and isinstance(err.value.cause, DegenerateCut)


def test_custom_interface_and_sources():
    f = (lambda x, y: np.ones(np.shape(x)), lambda x, y: np.ones(np.shape(x)))
    cfg = CaseConfig(nx=8, interface_points=((0.31, -0.2), (0.52, 0.5), (0.71, 1.3)), sources=f)
    r = run_case(cfg)
    assert r.passed and r.energy_error is None and r.report.effectivity is None


def test_outputs_deterministic(tmp_path):
    cfg = CaseConfig(nx=8, dump_matrix=True)
    a = write_case_outputs(run_case(cfg), tmp_path / "a")
    b = write_case_outputs(run_case(cfg), tmp_path / "b")
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(["summary.json", "patches.csv", "audit.csv", "estimators.csv",
                            "mesh.txt", "interface.txt", "matrix.txt", "solution.vtk",
                            "solution_clipped.vtk"])
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n
    summary = json.loads((a / "summary.json").read_text())
    assert set(summary["audits"]) >= AUDITS
    with open(a / "matrix.txt") as fh:
        first = fh.readline().split()
    assert len(first) == 3 and int(first[0]) >= 0


def test_fit_rate():
    h = np.array([0.1, 0.05, 0.025])
    assert fit_rate(h, 3 * h ** 2) == pytest.approx(2.0)
    assert np.isnan(fit_rate(h, [1.0, 0.0, 1.0]))


def test_small_convergence_table():
    t = convergence_study(CaseConfig(vtk=False), levels=(4, 8, 16))
    assert [r.config.nx for r in t.results] == [4, 8, 16]
    assert {c.name for c in t.checks} == {"energy_rate", "l2_rate", "effectivity_min",
                                          "effectivity_max", "effectivity_level_spread"}
    rows = t.rows()
    assert rows[0]["energy_error"] > rows[-1]["energy_error"]


def test_sweep_reports_degenerate_cut():
    t = robustness_sweep(CaseConfig(nx=8), contrasts=(1.0,), offsets=(0.0, 0.3))
    assert [r["status"] for r in t.rows] == ["degenerate_cut", "ok"]
    assert t.rows[1]["audits_passed"]


# ---------------------------------------------------------------- VTK

def test_vtk_two_triangles(tmp_path):
    m = mesh_from_arrays(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
                         np.array([[0, 1, 2], [0, 2, 3]]))
    p = export_vtk(m, {"s": np.arange(4.0)}, tmp_path / "two.vtk")
    c = read_vtk_counts(p)
    assert c["POINTS"] == 4 and c["CELLS"] == 2 and c["CELLS_SIZE"] == 8
    assert c["CELL_TYPES"] == 2 and c["POINT_DATA"] == 4 and c["arrays"] == ["s"]


def test_vtk_unclipped_and_clipped(tmp_path):
    mesh = build_structured_mesh(8, 8)
    topo = classify(mesh, vertical(np.sqrt(2) / 2))
    fields = {"u": np.stack([mesh.nodes[:, 0], mesh.nodes[:, 1]]),
              "g": np.ones((mesh.n_triangles, 2)), "id": np.arange(mesh.n_triangles, dtype=float)}
    p = export_vtk(mesh, fields, tmp_path / "a.vtk")
    c = read_vtk_counts(p)
    assert c["CELLS"] == mesh.n_triangles
    assert c["arrays"] == ["u_1", "u_2", "g", "id"]
    p = export_vtk(mesh, fields, tmp_path / "b.vtk", topology=topo, clipped=True)
    c = read_vtk_counts(p)
    lines = p.read_text().splitlines()
    i = lines.index(next(l for l in lines if l.startswith("POINTS")))
    pts = np.array([[float(v) for v in l.split()[:2]] for l in lines[i + 1:i + 1 + c["POINTS"]]])
    tri = pts.reshape(-1, 3, 2)
    e1, e2 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    assert abs(area.sum() - 1.0) <= 1e-10
    assert c["CELLS"] > mesh.n_triangles and "phase" in c["arrays"]


def test_vtk_rejects_bad_shapes_and_paths(tmp_path):
    mesh = build_structured_mesh(2, 2)
    with pytest.raises(InvalidArgument):
        export_vtk(mesh, {"x": np.ones(5)}, tmp_path / "x.vtk")
    with pytest.raises(OSError):
        export_vtk(mesh, {}, tmp_path / "missing" / "dir" / "x.vtk")


# ---------------------------------------------------------------- CLI

def _ini(tmp_path, text):
    p = tmp_path / "case.ini"
    p.write_text(text)
    return str(p)


def test_cli_run(tmp_path):
    cfg = _ini(tmp_path, "[mesh]\nnx = 8\n[output]\nvtk = false\n")
    for flux in ("irt0", "rt0", "rt1"):
        out = tmp_path / flux
        assert main(["run", "--config", cfg, "--out", str(out), "--flux", flux]) == 0
        s = json.loads((out / "summary.json").read_text())
        assert s["flux"] == flux and s["passed"]


def test_cli_error_exit(tmp_path):
    cfg = _ini(tmp_path, "[mesh]\nnx = 8\n[interface]\noffset = 0\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path)]) == 2


def test_cli_failed_criterion_exit(tmp_path):
    # three very coarse levels are pre-asymptotic: the rate gates fail
    cfg = _ini(tmp_path, "[study]\nlevels = 2, 3, 4\n[output]\nvtk = false\n")
    assert main(["converge", "--config", cfg, "--out", str(tmp_path / "c")]) == 1
    with open(tmp_path / "c" / "convergence.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 3


def test_cli_sweep(tmp_path):
    cfg = _ini(tmp_path, "[mesh]\nnx = 8\n[sweep]\ncontrasts = 1\noffsets = 0.3, 0\n")
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    summary = json.loads((tmp_path / "s" / "sweep_summary.json").read_text())
    assert summary["points"] == 2 and summary["degenerate"] == 1
