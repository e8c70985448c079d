import numpy as np
import pytest

from cutflux.cutfem import PrimalField, ProblemData, build_dofmap, solve_primal
from cutflux.cutgeom import classify, interface_weights
from cutflux.errors import InvalidArgument
from cutflux.flux_rt import (conservation_audit_rt, extend_source, extended_sources,
                             extension_rhs, interface_jump_rt, reconstruct_rt, rt_basis,
                             write_rt_audit_csv)
from cutflux.mesh import build_structured_mesh
from cutflux.multipliers import MultiplierField, build_multiplier
from cutflux.quadrature import segment_points

from conftest import solve_case, vertical

ALPHA = np.sqrt(2) / 2
G = np.array([0.8, -1.3])


def _linear_field(topo, data, same=True):
    """Both phases equal to the nodal interpolant of x -> G.x + 0.2 (zero on the boundary)."""
    dm = build_dofmap(topo)
    vals = topo.mesh.nodes @ G + 0.2
    coef = vals[dm.dof_node] * (1.0 if same else np.where(dm.dof_phase == 0, 1.0, 0.5))
    return PrimalField(topo, dm, coef, data)


def _far_from_boundary(mesh, tris):
    out = []
    for t in tris:
        ring = np.unique(np.concatenate([mesh.node_triangles(n) for n in mesh.triangles[t]]))
        if not mesh.boundary_node[mesh.triangles[ring]].any():
            out.append(int(t))
    return out


def test_rt_basis_dimensions():
    xi = np.zeros((4, 2))
    assert rt_basis(0, xi).shape == (4, 3, 2)
    assert rt_basis(1, xi).shape == (4, 8, 2)
    with pytest.raises(InvalidArgument):
        rt_basis(2, xi)


@pytest.mark.parametrize("m", [0, 1])
def test_zero_data(zero_case, m):
    topo, data, _, u, theta = zero_case
    s = reconstruct_rt(u, theta, m=m)
    assert not np.any(s[0].coef) and not np.any(s[1].coef)
    ext = extended_sources(u, m=m)
    for s_i in s:
        a = conservation_audit_rt(s_i, ext, topo, data)
        assert a.max == 0.0
    assert interface_jump_rt(*s, topo) == 0.0


def test_uncut_edge_mean_of_equal_fluxes():
    mesh = build_structured_mesh(8, 8)
    topo = classify(mesh, vertical(ALPHA))
    data = ProblemData(2.0, 5.0)
    u = _linear_field(topo, data)
    s = reconstruct_rt(u, MultiplierField.zeros(topo), m=0)
    cand = _far_from_boundary(mesh, np.flatnonzero(topo.tri_phase == 0))
    checked = 0
    for t in cand:
        for F in mesh.tri_edges[t]:
            tm, tp = mesh.edge_tris[F]
            if tp < 0 or topo.is_cut[tm] or topo.is_cut[tp] or not {tm, tp} <= set(cand):
                continue
            mid = mesh.edge_midpoints()[F][None]
            for side in (tm, tp):
                val = s[0].value(np.array([side]), mid)[0] @ mesh.normals[F]
                assert val == pytest.approx(2.0 * G @ mesh.normals[F], rel=1e-12)
            checked += 1
    assert checked > 0


@pytest.mark.parametrize("m", [0, 1])
@pytest.mark.parametrize("k2", [1e-3, 1.0, 1e3])
def test_m1_conservation_every_cell(m, k2):
    topo, data, _, u, theta = solve_case("M1", 8, 1.0, k2)
    ext = extended_sources(u, m=m)
    for s in reconstruct_rt(u, theta, m=m):
        a = conservation_audit_rt(s, ext, topo, data)
        assert a.relative <= 1e-8
        on = topo.in_tri[s.phase]
        assert np.all(np.isfinite(a.residual[on])) and np.all(np.isnan(a.residual[~on]))


def test_piecewise_constant_source():
    mesh = build_structured_mesh(8, 8)
    topo = classify(mesh, vertical(ALPHA))
    c = lambda v: (lambda x, y: np.full(np.shape(x), v))
    data = ProblemData(1.0, 10.0, c(2.0), c(-1.0))
    u = solve_primal(topo, data, tol=1e-12)
    theta = build_multiplier(u)
    ext = extended_sources(u, m=0)
    for s in reconstruct_rt(u, theta, m=0):
        assert conservation_audit_rt(s, ext, topo, data).relative <= 1e-9


def test_extension_zero_primal(zero_case):
    topo, data, _, u, _ = zero_case
    for t in topo.cut_tris:
        for i in range(2):
            assert not np.any(extension_rhs(t, i, u, topo, data, 1))


def test_extension_vanishes_for_smooth_equal_phases():
    mesh = build_structured_mesh(8, 8)
    topo = classify(mesh, vertical(ALPHA))
    data = ProblemData(3.0, 3.0)
    u = _linear_field(topo, data)
    cells = _far_from_boundary(mesh, topo.cut_tris)
    assert cells
    for t in cells:
        for i in range(2):
            assert np.abs(extension_rhs(t, i, u, topo, data, 0)).max() <= 1e-13


def test_extension_matches_direct_quadrature(m1_coarse):
    topo, data, _, u, _ = m1_coarse
    mesh = topo.mesh
    t = int(topo.cut_tris[len(topo.cut_tris) // 2])
    cell = topo.cells[t]
    w1, w2, kg, _ = interface_weights(data.k1, data.k2)
    h = mesh.h_tri[t]
    for i in range(2):
        # independent evaluation: 64-piece composite midpoint-free Gauss rule
        ends = np.linspace(0, 1, 65)
        total = 0.0
        g1 = u.gradients(0)[t] @ cell.normal
        g2 = u.gradients(1)[t] @ cell.normal
        for a, b in zip(ends[:-1], ends[1:]):
            pa = cell.gamma[0] + a * (cell.gamma[1] - cell.gamma[0])
            pb = cell.gamma[0] + b * (cell.gamma[1] - cell.gamma[0])
            p, w = segment_points(pa, pb, 2)
            jump = u.evaluate(0, np.full(len(w), t), p) - u.evaluate(1, np.full(len(w), t), p)
            wi = w1 if i == 0 else w2
            sgn = -1.0 if i == 0 else 1.0
            total += w @ ((data.k1 * g1 - data.k2 * g2) * (wi - 1.0)
                          + sgn * data.gamma * kg / h * jump)
        g = u.gradients(i)
        for j in range(3):
            F = mesh.tri_edges[t, j]
            tm, tp = mesh.edge_tris[F]
            L = topo.edge_len[F, 1 - i]
            if tp >= 0 and topo.mult_edge[i][F] and L > 0:
                total += 0.5 * L * data.k[i] * (g[tm] - g[tp]) @ mesh.normals[F]
        e = extend_source(t, i, u, m=0)
        assert e.coef[0] == pytest.approx(total / topo.piece_area[t, 1 - i], rel=1e-10)


def test_extend_source_rejects_uncut(m1_coarse):
    topo, data, _, u, _ = m1_coarse
    with pytest.raises(InvalidArgument):
        extend_source(int(np.flatnonzero(~topo.is_cut)[0]), 0, u)


@pytest.mark.parametrize("m", [0, 1])
def test_interface_jump_positive_and_decreasing(m):
    jumps = []
    for n in (8, 16, 32):
        topo, data, _, u, theta = solve_case("M1", n, 1.0, 10.0)
        jumps.append(interface_jump_rt(*reconstruct_rt(u, theta, m=m), topo))
    assert all(j > 0 for j in jumps)
    assert jumps[0] > jumps[1] > jumps[2]


def test_audit_csv(tmp_path, m1_coarse):
    topo, data, _, u, theta = m1_coarse
    ext = extended_sources(u, m=0)
    audits = [conservation_audit_rt(s, ext, topo, data) for s in reconstruct_rt(u, theta)]
    p = tmp_path / "audit.csv"
    write_rt_audit_csv(audits, topo, p)
    rows = p.read_text().splitlines()
    assert rows[0] == "cell,subdomain,residual,cut"
    assert len(rows) == 1 + int(topo.in_tri[0].sum() + topo.in_tri[1].sum())
