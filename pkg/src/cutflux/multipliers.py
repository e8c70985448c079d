"""Edge Lagrange multipliers of the hybrid formulation, computed patch by patch.

Test functions of the broken space are phi_a chi_T (vertex ``a`` of triangle
``T`` of phase i) and are indexed as ``(i, T, a)``. Multiplier unknowns are
edgewise linear and indexed ``(i, F, p)`` with ``p`` the endpoint of
``mesh.edges[F]``. The multiplier edge set of phase i (``topo.mult_edge``)
holds the interior edges of Omega_h^i plus its edges on the outer boundary.
"""
import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .cutfem import ghost_local, nitsche_local, volume_local
from .cutgeom import barycentric, phase_points
from .errors import InconsistentPatch, InvalidArgument
from .linalg import lstsq_min_norm
from .mesh import LOCAL_EDGES, edge_signs

PATCH_TOL = 1e-9
IDENTITY_TOL = 1e-8
MAX_INFSUP_DOFS = 2000


@dataclass(eq=False)
class BrokenField:
    """Piecewise P1 field: ``values[i, T, a]`` is the value of phase i at vertex a of T."""

    values: np.ndarray

    @classmethod
    def zeros(cls, topo):
        return cls(np.zeros((2, topo.mesh.n_triangles, 3)))

    @classmethod
    def basis(cls, topo, phase, tri, vertex):
        v = cls.zeros(topo)
        v.values[phase, tri, vertex] = 1.0
        return v

    @classmethod
    def from_primal(cls, u):
        return cls(np.stack([u.cell_values(0), u.cell_values(1)]))

    def gradients(self, mesh):
        return np.einsum("ita,tad->itd", self.values, mesh.grads)


@dataclass(eq=False)
class MultiplierField:
    """``values[i, F, p]``: multiplier of phase i on edge F at endpoint p."""

    values: np.ndarray
    patches: list = field(default_factory=list, repr=False)

    @classmethod
    def zeros(cls, topo):
        return cls(np.zeros((2, topo.mesh.n_edges, 2)))

    def edge_mean(self, phase):
        return self.values[phase].mean(axis=1)


# ----------------------------------------------------------------------------
# incidence helpers
# ----------------------------------------------------------------------------

def _edge_signs(topo):
    if "edge_signs" not in topo._cache:
        topo._cache["edge_signs"] = edge_signs(topo.mesh)
    return topo._cache["edge_signs"]


def _incidence(topo):
    """Per (T, local edge j, side s) the local vertex, the edge endpoint index
    and the b_h coefficient k_i h_F eps_{T,F} / 2 (phase factor applied later)."""
    key = "b_incidence"
    if key in topo._cache:
        return topo._cache[key]
    mesh = topo.mesh
    tri = mesh.triangles
    F = mesh.tri_edges
    loc = np.array(LOCAL_EDGES)
    vert = np.broadcast_to(loc[None], (mesh.n_triangles, 3, 2)).copy()
    first = tri[np.arange(mesh.n_triangles)[:, None], loc[:, 0][None]]
    pidx = np.where(mesh.edges[F, 0] == first, 0, 1)
    endp = np.stack([pidx, 1 - pidx], axis=2)
    coef = 0.5 * mesh.h_edge[F] * mesh.tri_edge_sign
    out = (vert, endp, coef)
    topo._cache[key] = out
    return out


def _edge_vertex_local(topo):
    """``loc[F, s, p]``: local vertex of endpoint p of F in triangle side s
    (s=0 for T_F^-, 1 for T_F^+; -1 when absent)."""
    key = "edge_vertex_local"
    if key in topo._cache:
        return topo._cache[key]
    mesh = topo.mesh
    loc = -np.ones((mesh.n_edges, 2, 2), np.int64)
    for s in range(2):
        t = mesh.edge_tris[:, s]
        ok = t >= 0
        tt = mesh.triangles[t[ok]]
        for p in range(2):
            node = mesh.edges[ok, p]
            loc[ok, s, p] = np.argmax(tt == node[:, None], axis=1)
    topo._cache[key] = loc
    return loc


def edge_jumps(topo, values_phase):
    """[[v]] at the two endpoints of every edge for one phase, (E, 2).

    values_phase is (T, 3); boundary edges return the one-sided trace.
    """
    mesh = topo.mesh
    loc = _edge_vertex_local(topo)
    tm, tp = mesh.edge_tris[:, 0], mesh.edge_tris[:, 1]
    vm = values_phase[tm[:, None], loc[:, 0]]
    has_p = tp >= 0
    vp = np.zeros_like(vm)
    vp[has_p] = values_phase[tp[has_p][:, None], loc[has_p, 1]]
    return vm - vp


def _fragment_params(topo, phase):
    """Fragment F^i as parameters (s0, s1) along each edge (nan when empty)."""
    mesh = topo.mesh
    a = mesh.nodes[mesh.edges[:, 0]]
    d = mesh.nodes[mesh.edges[:, 1]] - a
    L2 = np.einsum("ed,ed->e", d, d)
    seg = topo.edge_seg[:, phase]
    s0 = np.einsum("ed,ed->e", seg[:, 0] - a, d) / L2
    s1 = np.einsum("ed,ed->e", seg[:, 1] - a, d) / L2
    return np.minimum(s0, s1), np.maximum(s0, s1)


def _fragment_hat_integrals(topo, phase):
    """(E, 2): integral over F^i of the edge hat of each endpoint."""
    mesh = topo.mesh
    s0, s1 = _fragment_params(topo, phase)
    h = mesh.h_edge
    empty = ~topo.in_edge[phase]
    s0 = np.where(empty, 0.0, s0)
    s1 = np.where(empty, 0.0, s1)
    # hat of endpoint 0 is 1 - s, of endpoint 1 is s
    i1 = h * (s1 ** 2 - s0 ** 2) / 2.0
    i0 = h * (s1 - s0) - i1
    return np.stack([i0, i1], axis=1)


def _mean_normal_flux(topo, k, grads_phase, phase):
    """<k grad v . n_F> per edge (one-sided on boundary edges)."""
    mesh = topo.mesh
    tm, tp = mesh.edge_tris[:, 0], mesh.edge_tris[:, 1]
    gm = np.einsum("ed,ed->e", grads_phase[tm], mesh.normals)
    has_p = tp >= 0
    gp = np.where(has_p, np.einsum("ed,ed->e", grads_phase[np.maximum(tp, 0)], mesh.normals), 0.0)
    return k * np.where(has_p, 0.5 * (gm + gp), gm)


# ----------------------------------------------------------------------------
# forms
# ----------------------------------------------------------------------------

def eval_b_h(mu, v, topo, data):
    """Nodal-quadrature coupling sum_i sum_F (k_i h_F/2) sum_N mu_F(N) [[v]](N)."""
    total = 0.0
    h = topo.mesh.h_edge
    for i in range(2):
        E = topo.mult_edge[i]
        jmp = edge_jumps(topo, v.values[i])
        total += data.k[i] * 0.5 * float(np.sum((h[:, None] * mu.values[i] * jmp)[E]))
    return total


def eval_d_h(u, v, topo, data):
    """sum_i sum_F int_{F^i} <k_i grad u . n>[[v]] + <k_i grad v . n>[[u]]."""
    mesh = topo.mesh
    total = 0.0
    gu = u.gradients(mesh)
    gv = v.gradients(mesh)
    for i in range(2):
        E = topo.mult_edge[i]
        hat = _fragment_hat_integrals(topo, i)
        ju = edge_jumps(topo, u.values[i])
        jv = edge_jumps(topo, v.values[i])
        mu_ = _mean_normal_flux(topo, data.k[i], gu[i], i)
        mv = _mean_normal_flux(topo, data.k[i], gv[i], i)
        term = mu_[:, None] * jv + mv[:, None] * ju
        total += float(np.sum((hat * term)[E]))
    return total


def residual_vector(u, topo=None, data=None, degree=4):
    """r_h(phi_a chi_T) for every broken basis function, shape (2, T, 3).

    r_h(v) = l_h(v) - a_h(u_h, v) + d_h(u_h, v) with the forms evaluated
    element by element.
    """
    topo = u.topology if topo is None else topo
    data = u.data if data is None else data
    mesh = topo.mesh
    R = np.zeros((2, mesh.n_triangles, 3))
    U = np.stack([u.cell_values(0), u.cell_values(1)])
    G = np.einsum("ita,tad->itd", U, mesh.grads)
    for i in range(2):
        tri, pts, w = phase_points(topo, i, degree)
        if tri.size:
            fq = np.asarray(data.source(i)(pts[:, 0], pts[:, 1]), float) * w
            lam = barycentric(mesh, tri, pts)
            np.add.at(R[i], tri, lam * fq[:, None])
        tris, K = volume_local(topo, data, i)
        R[i, tris] -= np.einsum("tab,tb->ta", K, U[i, tris])
        edges, dm, dp, wgt = ghost_local(topo, data, i)
        if edges.size:
            tm, tp = mesh.edge_tris[edges, 0], mesh.edge_tris[edges, 1]
            jump = np.einsum("ea,ea->e", dm, U[i, tm]) - np.einsum("ea,ea->e", dp, U[i, tp])
            s = data.beta * wgt * jump
            np.add.at(R[i], tm, -s[:, None] * dm)
            np.add.at(R[i], tp, s[:, None] * dp)
        # d_h(u_h, phi_a chi_T): eps_{T,F} <k grad u . n> int_{F^i} phi_a
        E = topo.mult_edge[i]
        mean = np.where(E, _mean_normal_flux(topo, data.k[i], G[i], i), 0.0)
        hat = _fragment_hat_integrals(topo, i)
        loc = _edge_vertex_local(topo)
        for s, sign in ((0, 1.0), (1, -1.0)):
            t = mesh.edge_tris[:, s]
            ok = E & (t >= 0)
            for p in range(2):
                np.add.at(R[i], (t[ok], loc[ok, s, p]), sign * mean[ok] * hat[ok, p])
    for t in topo.cut_tris:
        P, C = nitsche_local(topo, data, t)
        loc6 = np.concatenate([U[0, t], U[1, t]])
        r6 = (data.gamma * P - C) @ loc6
        R[0, t] -= r6[:3]
        R[1, t] -= r6[3:]
    for i in range(2):
        R[i, ~topo.in_tri[i]] = 0.0
    return R


def residual(u, v, topo=None, data=None):
    """r_h(v) for a broken field v."""
    return float(np.sum(residual_vector(u, topo, data) * v.values))


def b_action(mu, topo, data):
    """b_h(mu, phi_a chi_T) for every broken basis function, shape (2, T, 3)."""
    mesh = topo.mesh
    vert, endp, coef = _incidence(topo)
    out = np.zeros((2, mesh.n_triangles, 3))
    F = mesh.tri_edges
    rows = np.arange(mesh.n_triangles)[:, None]
    for i in range(2):
        on = topo.mult_edge[i][F] & topo.in_tri[i][:, None]
        c = data.k[i] * coef * on
        for s in range(2):
            vals = c * mu.values[i][F, endp[:, :, s]]
            np.add.at(out[i], (np.broadcast_to(rows, F.shape), vert[:, :, s]), vals)
    return out


# ----------------------------------------------------------------------------
# node patches
# ----------------------------------------------------------------------------

@dataclass
class PatchResult:
    node: int
    phase: int
    edges: np.ndarray
    values: np.ndarray
    rows: int
    cols: int
    rank: int
    residual: float


def solve_node_patch(node, phase, u, topo=None, data=None, R=None, tol=PATCH_TOL, rscale=None):
    """Local multiplier theta_N^i on the edges of F_N carrying phase-i multipliers.

    Rows: b(theta, phi_M chi_T) = r(phi_N chi_T) delta_{MN} for every T of the
    patch and vertex M of T, plus the signed circulation constraint at
    interior nodes touched by the patch. Solved in minimum-norm least squares.
    The residual is measured relative to the larger of the local right-hand
    side and ``rscale`` (default: max |r_h| over the phase), so that the
    Galerkin error of u_h is not amplified at nodes with a tiny local load.
    """
    topo = u.topology if topo is None else topo
    data = u.data if data is None else data
    mesh = topo.mesh
    if not topo.node_in[phase][node]:
        raise InvalidArgument(f"node {node} is not a node of the phase-{phase + 1} fictitious domain")
    R = residual_vector(u, topo, data) if R is None else R
    rscale = float(np.abs(R[phase]).max(initial=0.0)) if rscale is None else rscale
    k = data.k[phase]
    tris = mesh.node_triangles(node)
    tris = tris[topo.in_tri[phase][tris]]
    edges = mesh.node_edges(node)
    edges = edges[topo.mult_edge[phase][edges]]
    ne = edges.size
    if ne == 0:
        rhs = R[phase, tris][mesh.triangles[tris] == node]
        res = float(np.linalg.norm(rhs))
        scale = max(rscale, 1e-300)
        if res > tol * scale:
            raise InconsistentPatch(f"node {node}, phase {phase + 1}: no edges but residual {res:.3e}",
                                    node=node, phase=phase, residual=res)
        return PatchResult(int(node), phase, edges, np.zeros((0, 2)), tris.size * 3, 0, 0, 0.0)
    col = {int(f): e for e, f in enumerate(edges)}
    vert, endp, coef = _incidence(topo)
    href = float(mesh.h_edge[edges].mean())
    nrow = 3 * tris.size
    A = np.zeros((nrow, 2 * ne))
    b = np.zeros(nrow)
    for r, t in enumerate(tris):
        for j in range(3):
            e = col.get(int(mesh.tri_edges[t, j]))
            if e is None:
                continue
            for s in range(2):
                A[3 * r + vert[t, j, s], 2 * e + endp[t, j, s]] += k * coef[t, j] / (k * href)
        a = int(np.flatnonzero(mesh.triangles[t] == node)[0])
        b[3 * r + a] = R[phase, t, a] / (k * href)
    # circulation constraints at nodes of the patch whose fan lies in T_h^i
    ends = mesh.edges[edges]
    signs = _edge_signs(topo)[edges]
    cons = []
    for P in np.unique(ends):
        if not topo.circulation_node[phase][P]:
            continue
        row = np.zeros(2 * ne)
        for e in range(ne):
            for p in range(2):
                if ends[e, p] == P:
                    row[2 * e + p] = signs[e, p] * mesh.h_edge[edges[e]] / href
        cons.append(row)
    if cons:
        A = np.vstack([A, np.array(cons)])
        b = np.concatenate([b, np.zeros(len(cons))])
    x, res, rank = lstsq_min_norm(A, b)
    bnorm = max(float(np.linalg.norm(b)), rscale / (k * href))
    rel = res / bnorm if bnorm > 0 else res
    if rel > tol and res > 1e-14 * max(href, 1.0):
        raise InconsistentPatch(f"node {node}, phase {phase + 1}: patch residual {rel:.3e}",
                                node=int(node), phase=phase, residual=rel)
    return PatchResult(int(node), phase, edges, x.reshape(ne, 2), A.shape[0], A.shape[1],
                       int(rank), float(rel))


def build_multiplier(u, topo=None, data=None, tol=PATCH_TOL, check=True):
    """theta_h = sum of the node-patch contributions, with audits in ``.patches``."""
    topo = u.topology if topo is None else topo
    data = u.data if data is None else data
    R = residual_vector(u, topo, data)
    theta = MultiplierField.zeros(topo)
    for i in range(2):
        rscale = float(np.abs(R[i]).max(initial=0.0))
        for node in np.flatnonzero(topo.node_in[i]):
            pr = solve_node_patch(int(node), i, u, topo, data, R=R, tol=tol, rscale=rscale)
            if pr.edges.size:
                theta.values[i, pr.edges] += pr.values
            theta.patches.append(pr)
    if check:
        err = identity_defect(theta, u, topo, data, R=R)
        if err > IDENTITY_TOL:
            raise InconsistentPatch(f"global multiplier identity violated: {err:.3e}", residual=err)
    return theta


# ----------------------------------------------------------------------------
# audits
# ----------------------------------------------------------------------------

def identity_defect(theta, u, topo=None, data=None, R=None):
    """max over the broken basis of |b_h(theta, v) - r_h(v)|, relative to max |r_h(v)|."""
    topo = u.topology if topo is None else topo
    data = u.data if data is None else data
    R = residual_vector(u, topo, data) if R is None else R
    d = np.abs(b_action(theta, topo, data) - R).max()
    scale = np.abs(R).max()
    return float(d / scale) if scale > 0 else float(d)


def constraint_defect(theta, topo):
    """max over constrained nodes of |sum_F s_N^F h_F theta_F(N)|, relative to the
    largest term of the sum (absolute when theta vanishes)."""
    mesh = topo.mesh
    signs = _edge_signs(topo)
    worst = 0.0
    scale = 0.0
    for i in range(2):
        acc = np.zeros(mesh.n_nodes)
        term = signs * mesh.h_edge[:, None] * theta.values[i]
        term = np.where(topo.mult_edge[i][:, None], term, 0.0)
        np.add.at(acc, mesh.edges.ravel(), term.ravel())
        inner = topo.circulation_node[i]
        if np.any(inner):
            worst = max(worst, float(np.abs(acc[inner]).max()))
        scale = max(scale, float(np.abs(term).max(initial=0.0)))
    return worst / scale if scale > 0 else worst


def kernel_defect(u, topo=None, data=None):
    """max over the multiplier basis of |b_h(mu, u_h)|; zero for continuous u_h."""
    topo = u.topology if topo is None else topo
    data = u.data if data is None else data
    v = BrokenField.from_primal(u)
    h = topo.mesh.h_edge
    worst = 0.0
    for i in range(2):
        jmp = edge_jumps(topo, v.values[i])
        vals = 0.5 * data.k[i] * h[:, None] * jmp
        E = topo.mult_edge[i]
        if np.any(E):
            worst = max(worst, float(np.abs(vals[E]).max()))
    return worst


def write_patch_csv(theta, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "subdomain", "rows", "cols", "rank", "residual"])
        for p in theta.patches:
            w.writerow([p.node, p.phase + 1, p.rows, p.cols, p.rank, f"{p.residual:.6e}"])


# ----------------------------------------------------------------------------
# discrete inf-sup smoke test
# ----------------------------------------------------------------------------

def _mult_index(topo):
    E = topo.mesh.n_edges
    ids = -np.ones((2, E, 2), np.int64)
    n = 0
    for i in range(2):
        f = np.flatnonzero(topo.mult_edge[i])
        ids[i, f] = n + np.arange(2 * f.size).reshape(-1, 2)
        n += 2 * f.size
    return ids, n


def _broken_index(topo):
    T = topo.mesh.n_triangles
    ids = -np.ones((2, T, 3), np.int64)
    n = 0
    for i in range(2):
        t = np.flatnonzero(topo.in_tri[i])
        ids[i, t] = n + np.arange(3 * t.size).reshape(-1, 3)
        n += 3 * t.size
    return ids, n


def verify_infsup_smoke(topo, data, max_dofs=MAX_INFSUP_DOFS):
    """Smallest singular value of b_h between (M_h, ||.||_M) and (D_h, ||.||_D).

    Returns ``None`` when the multiplier space exceeds ``max_dofs``.
    """
    mesh = topo.mesh
    mid, nm = _mult_index(topo)
    did, nd = _broken_index(topo)
    if nm > max_dofs:
        return None
    B = np.zeros((nm, nd))
    vert, endp, coef = _incidence(topo)
    F = mesh.tri_edges
    for i in range(2):
        for t in np.flatnonzero(topo.in_tri[i]):
            for j in range(3):
                f = F[t, j]
                if not topo.mult_edge[i][f]:
                    continue
                for s in range(2):
                    B[mid[i, f, endp[t, j, s]], did[i, t, vert[t, j, s]]] += data.k[i] * coef[t, j]
    # multiplier norm: int_F k h_F mu^2
    M = np.zeros((nm, nm))
    mass = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    for i in range(2):
        for f in np.flatnonzero(topo.mult_edge[i]):
            ids = mid[i, f]
            M[np.ix_(ids, ids)] += data.k[i] * mesh.h_edge[f] ** 2 * mass
    # broken norm: energy part element by element plus scaled edge jumps
    G = np.zeros((nd, nd))
    for i in range(2):
        tris, K = volume_local(topo, data, i)
        for t, Kt in zip(tris, K):
            G[np.ix_(did[i, t], did[i, t])] += Kt
        edges, dm, dp, wgt = ghost_local(topo, data, i)
        for e in range(edges.size):
            f = edges[e]
            ids = np.concatenate([did[i, mesh.edge_tris[f, 0]], did[i, mesh.edge_tris[f, 1]]])
            jv = np.concatenate([dm[e], -dp[e]])
            G[np.ix_(ids, ids)] += wgt[e] * np.outer(jv, jv)
        loc = _edge_vertex_local(topo)
        for f in np.flatnonzero(topo.mult_edge[i]):
            ids = []
            for s, sign in ((0, 1.0), (1, -1.0)):
                t = mesh.edge_tris[f, s]
                if t < 0:
                    continue
                for p in range(2):
                    ids.append((p, did[i, t, loc[f, s, p]], sign))
            # [[v]] at endpoint p is a linear combination of the listed dofs
            Jm = np.zeros((2, nd))
            for p, d, sign in ids:
                Jm[p, d] += sign
            sub = np.flatnonzero(np.any(Jm != 0, axis=0))
            Js = Jm[:, sub]
            G[np.ix_(sub, sub)] += data.k[i] / mesh.h_edge[f] * Js.T @ (mesh.h_edge[f] * mass) @ Js
    for t in topo.cut_tris:
        P, _ = nitsche_local(topo, data, t)
        ids = np.concatenate([did[0, t], did[1, t]])
        G[np.ix_(ids, ids)] += P
    # circulation constraints
    signs = _edge_signs(topo)
    rows = []
    for i in range(2):
        for N in np.flatnonzero(topo.circulation_node[i]):
            row = np.zeros(nm)
            for f in mesh.node_edges(N):
                if topo.mult_edge[i][f]:
                    p = 0 if mesh.edges[f, 0] == N else 1
                    row[mid[i, f, p]] = signs[f, p] * mesh.h_edge[f]
            rows.append(row)
    Z = scipy.linalg.null_space(np.array(rows)) if rows else np.eye(nm)
    Lm = scipy.linalg.cholesky(Z.T @ M @ Z, lower=True)
    Lg = scipy.linalg.cholesky(G, lower=True)
    K = scipy.linalg.solve_triangular(Lm, Z.T @ B, lower=True)
    K = scipy.linalg.solve_triangular(Lg, K.T, lower=True).T
    sv = scipy.linalg.svdvals(K)
    return float(sv.min())
