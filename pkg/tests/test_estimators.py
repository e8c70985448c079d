import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cutflux.cutfem import ProblemData, solve_primal
from cutflux.cutgeom import classify
from cutflux.estimators import (EstimatorReport, data_oscillation, estimate, eta_cell,
                                eta_interface)
from cutflux.flux_irt import reconstruct_irt
from cutflux.flux_rt import reconstruct_rt
from cutflux.mesh import build_structured_mesh
from cutflux.multipliers import build_multiplier
from cutflux.quadrature import fan_triangles, subdivide, triangles_points

from conftest import build_case, solve_case, vertical

ALPHA = np.sqrt(2) / 2


class ConsistentFlux:
    """sigma = k_i grad u_h^i, phase by phase."""

    def __init__(self, u):
        self.u = u

    def value(self, tri, pts, phase):
        g = np.stack([self.u.data.k[i] * self.u.gradients(i) for i in range(2)])
        return g[phase, tri]


class PiecewiseConstantFlux:
    """A constant vector per triangle (the same on both phases)."""

    def __init__(self, vecs):
        self.vecs = vecs

    def value(self, tri, pts, phase):
        return self.vecs[tri]


@pytest.fixture(scope="module")
def m1_report():
    topo, data, mc, u, theta = solve_case("M1", 8)
    sigma = reconstruct_irt(u, theta)
    return topo, data, mc, u, sigma, estimate(sigma, u, exact_grad=mc.grad)


def test_consistent_flux_zero_eta(m1_coarse):
    topo, data, _, u, _ = m1_coarse
    assert np.abs(eta_cell(ConsistentFlux(u), u)).max() <= 1e-14


def test_zero_data_all_zero(zero_case):
    topo, data, mc, u, theta = zero_case
    for sigma in (reconstruct_irt(u, theta), reconstruct_rt(u, theta, m=0)):
        r = estimate(sigma, u, exact_grad=mc.grad)
        assert r.eta == r.eta_gamma == r.epsilon == 0.0
        assert r.exact_error == 0.0
        assert r.effectivity is None and r.exact_case


def test_eta_overkill_quadrature(m1_report):
    topo, data, _, u, sigma, rep = m1_report
    mesh = topo.mesh
    total = 0.0
    for i in range(2):
        for t in range(mesh.n_triangles):
            if topo.tri_phase[t] == i:
                xy = mesh.tri_coords(t)[None]
            elif topo.tri_phase[t] < 0:
                xy = fan_triangles(topo.cells[t].polys[i])
            else:
                continue
            pts, w = triangles_points(subdivide(xy, 2), 4)
            pts = pts.reshape(-1, 2)
            tri = np.full(pts.shape[0], t)
            d = sigma.value(tri, pts, np.full(tri.size, i)) - data.k[i] * u.gradients(i)[tri]
            total += float(w.ravel() @ np.einsum("qd,qd->q", d, d)) / data.k[i]
    assert rep.eta ** 2 == pytest.approx(total, rel=1e-6)


def test_uncut_configuration_has_no_interface_terms():
    mesh = build_structured_mesh(6, 6)
    topo = classify(mesh, vertical(2.0))
    f = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    data = ProblemData(1.0, 1.0, f, f)
    u = solve_primal(topo, data)
    r = estimate(reconstruct_irt(u, build_multiplier(u)), u)
    assert r.edges.size == 0 and r.cut_cells.size == 0 and r.eta_gamma == 0.0


def test_constant_traces_give_zero_eta_f(m1_coarse):
    topo, data, _, u, _ = m1_coarse
    vecs = np.random.default_rng(3).standard_normal((topo.mesh.n_triangles, 2))
    edges, eta_f, _, _ = eta_interface(PiecewiseConstantFlux(vecs), u)
    assert edges.size > 0
    assert np.abs(eta_f).max() <= 1e-13 * np.abs(vecs).max()


def test_eta_gamma_converges():
    vals = []
    hs = [1 / 8, 1 / 16, 1 / 32]
    for n in (8, 16, 32):
        topo, data, mc, u, theta = solve_case("M1", n)
        vals.append(estimate(reconstruct_irt(u, theta), u).eta_gamma)
    rate = np.polyfit(np.log(hs), np.log(vals), 1)[0]
    assert rate >= 0.5


def test_oscillation_examples():
    mesh = build_structured_mesh(8, 8)
    topo = classify(mesh, vertical(ALPHA))
    c = lambda v: (lambda x, y: np.full(np.shape(x), v))
    contrib, eps = data_oscillation(topo, ProblemData(1.0, 10.0, c(2.0), c(2.0)))
    assert eps <= 1e-14
    contrib, eps = data_oscillation(topo, ProblemData(1.0, 10.0, c(2.0), c(-1.0)))
    assert eps > 0
    assert np.all(contrib[topo.is_cut] > 0) and np.all(contrib[~topo.is_cut] <= 1e-28)


def test_oscillation_rate_smooth_source():
    f = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    eps = []
    for n in (8, 16, 32, 64):
        topo = classify(build_structured_mesh(n, n), vertical(ALPHA))
        eps.append(data_oscillation(topo, ProblemData(1.0, 10.0, f, f))[1])
    rate = np.polyfit(np.log([1 / 8, 1 / 16, 1 / 32, 1 / 64]), np.log(eps), 1)[0]
    assert rate == pytest.approx(2.0, abs=0.15)


def test_report_aggregates(m1_report):
    *_, rep = m1_report
    assert rep.eta == pytest.approx(np.sqrt(np.sum(rep.eta_T ** 2)))
    assert rep.eta_gamma == pytest.approx(np.sqrt(np.sum(rep.eta_F ** 2) + np.sum(rep.eta_tilde ** 2)))
    for arr in (rep.eta_T, rep.eta_F, rep.eta_tilde, rep.oscillation):
        assert np.all(arr >= 0)
    assert rep.effectivity == pytest.approx(rep.total / rep.exact_error)
    assert rep.reliable


def test_monotone_aggregation(m1_report):
    *_, rep = m1_report
    for t in np.flatnonzero(rep.eta_T > 0)[:20]:
        reduced = np.delete(rep.eta_T, t)
        assert np.sqrt(np.sum(reduced ** 2)) < rep.eta


@given(st.floats(0.01, 100.0))
def test_homogeneity(c):
    mesh, topo, data, mc = build_case("M1", 6)
    base = None
    out = []
    for scale in (1.0, c):
        d = ProblemData(data.k1, data.k2, lambda x, y, s=scale: s * mc.f[0](x, y),
                        lambda x, y, s=scale: s * mc.f[1](x, y))
        u = solve_primal(topo, d, tol=1e-12)
        out.append(estimate(reconstruct_irt(u, build_multiplier(u)), u))
    base, scaled = out
    for name in ("eta", "eta_gamma", "epsilon"):
        assert getattr(scaled, name) == pytest.approx(c * getattr(base, name), rel=1e-7, abs=1e-14)


def test_jump_domain_variants(m1_coarse):
    topo, data, _, u, theta = m1_coarse
    sigma = reconstruct_irt(u, theta)
    _, _, cells, a = eta_interface(sigma, u, jump_domain="interface")
    _, _, _, b = eta_interface(sigma, u, jump_domain="trace")
    _, _, _, c = eta_interface(sigma, u, jump_domain="cell")
    assert np.allclose(b, a * np.sqrt(topo.mesh.h_tri[cells]))
    assert np.all(c >= 0)
    with pytest.raises(ValueError):
        eta_interface(sigma, u, jump_domain="volume")


def test_rt_flux_reports_interface_jump(m1_coarse):
    topo, data, mc, u, theta = m1_coarse
    r = estimate(reconstruct_rt(u, theta, m=1), u, exact_grad=mc.grad)
    assert r.flux == "rt1"
    assert r.extra["interface_flux_jump"] > 0


def test_report_files(tmp_path, m1_report):
    topo, *_, rep = m1_report
    rep.write_csv(tmp_path / "est.csv")
    rep.write_summary(tmp_path / "est.json")
    with open(tmp_path / "est.csv") as fh:
        rows = list(csv.DictReader(fh))
    cells = [r for r in rows if r["kind"] == "cell"]
    edges = [r for r in rows if r["kind"] == "edge"]
    assert len(cells) == topo.mesh.n_triangles and len(edges) == rep.edges.size
    assert np.sqrt(sum(float(r["eta_T"]) ** 2 for r in cells)) == pytest.approx(rep.eta, rel=1e-6)
    summary = json.loads((tmp_path / "est.json").read_text())
    assert summary["effectivity"] == pytest.approx(rep.effectivity)
    assert summary["jump_domain"] == "interface"


def test_report_without_exact_solution():
    r = EstimatorReport(np.ones(2), np.zeros(0, int), np.zeros(0), np.zeros(0, int), np.zeros(0),
                        np.zeros(2))
    assert r.effectivity is None and r.reliable is None and not r.exact_case
