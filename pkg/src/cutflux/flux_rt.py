"""Per-phase Raviart-Thomas fluxes RT^m(Omega_h^i), m in {0, 1}.

Local fields are written in the scaled coordinate xi = (x - c_T) / h_T:

    RT0 : a + b xi                        (3 coefficients)
    RT1 : P1^2 + xi (c1 xi_1 + c2 xi_2)   (8 coefficients)

Edge degrees of freedom are the moments int_F sigma.n_F w_l with w_0 = 1 and
w_1 the Legendre polynomial running from -1 at ``edges[F, 0]`` to +1 at
``edges[F, 1]``; the RT1 interior ones are int_T sigma . e_d.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from .cutgeom import interface_weights, phase_points
from .errors import DegenerateCut, InvalidArgument
from .multipliers import _mean_normal_flux
from .quadrature import polygon_points, segment_points, segment_rule, triangles_points

# relative area below which a complement region T_C^i is treated as empty
SLIVER_TOL = 1e-14


# ----------------------------------------------------------------------------
# local polynomial spaces
# ----------------------------------------------------------------------------

def n_basis(m):
    return {0: 3, 1: 8}[m]


def rt_basis(m, xi):
    """Basis values (..., nb, 2) at scaled points xi (..., 2)."""
    x, y = xi[..., 0], xi[..., 1]
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    if m == 0:
        comps = [(one, zero), (zero, one), (x, y)]
    elif m == 1:
        comps = [(one, zero), (zero, one), (x, zero), (y, zero), (zero, x), (zero, y),
                 (x * x, x * y), (x * y, y * y)]
    else:
        raise InvalidArgument(f"unsupported Raviart-Thomas degree {m}")
    return np.stack([np.stack(c, axis=-1) for c in comps], axis=-2)


def rt_div_poly(m, coef, h):
    """Divergence as P^m coefficients in the basis (1, xi_1, xi_2)[:m-dim]."""
    if m == 0:
        return (2.0 * coef[..., 2] / h)[..., None]
    return np.stack([(coef[..., 2] + coef[..., 5]) / h, 3.0 * coef[..., 6] / h,
                     3.0 * coef[..., 7] / h], axis=-1)


def pm_basis(m, xi):
    """Scalar P^m basis (..., m_dim) at scaled points."""
    if m == 0:
        return np.ones(xi.shape[:-1] + (1,))
    return np.concatenate([np.ones(xi.shape[:-1] + (1,)), xi], axis=-1)


def _scaled(mesh, tri, pts):
    c = mesh.nodes[mesh.triangles[tri]].mean(axis=-2)
    return (pts - c) / mesh.h_tri[tri][..., None]


# ----------------------------------------------------------------------------
# fields
# ----------------------------------------------------------------------------

@dataclass(eq=False)
class SubdomainRTFlux:
    """RT^m flux of one phase on its fictitious domain."""

    phase: int
    degree: int
    topology: object
    edge_moments: np.ndarray
    interior_moments: np.ndarray
    coef: np.ndarray

    @property
    def mesh(self):
        return self.topology.mesh

    @property
    def cells(self):
        return np.flatnonzero(self.topology.in_tri[self.phase])

    def value(self, tri, pts):
        xi = _scaled(self.mesh, tri, pts)
        return np.einsum("qkd,qk->qd", rt_basis(self.degree, xi), self.coef[tri])

    def normal_trace(self, tri, pts, normal):
        return np.einsum("qd,qd->q", self.value(tri, pts), np.broadcast_to(normal, pts.shape))

    def divergence_poly(self):
        """(T, m_dim) divergence coefficients in the scaled P^m basis."""
        return rt_div_poly(self.degree, self.coef, self.mesh.h_tri)

    def divergence(self, tri, pts):
        xi = _scaled(self.mesh, tri, pts)
        return np.einsum("qk,qk->q", pm_basis(self.degree, xi), self.divergence_poly()[tri])


def _edge_dof_matrix(mesh, tris, m, degree=4):
    """DOF matrix (n, nb, nb) of the local RT^m basis on triangles ``tris``."""
    nb = n_basis(m)
    s, w = segment_rule(degree)
    F = mesh.tri_edges[tris]
    A = mesh.nodes[mesh.edges[F, 0]]
    B = mesh.nodes[mesh.edges[F, 1]]
    pts = A[:, :, None, :] + s[None, None, :, None] * (B - A)[:, :, None, :]
    wt = w[None, None, :] * mesh.h_edge[F][:, :, None]
    xi = _scaled(mesh, tris[:, None, None], pts)
    psi = rt_basis(m, xi)
    psin = np.einsum("tjqkd,tjd->tjqk", psi, mesh.normals[F])
    leg = np.stack([np.ones_like(s), 2.0 * s - 1.0])[: m + 1]
    mat = np.einsum("tjqk,lq,tjq->tjlk", psin, leg, wt).reshape(tris.size, 3 * (m + 1), nb)
    if m == 1:
        tp, tw = triangles_points(mesh.tri_coords(tris), 2)
        xi_t = _scaled(mesh, tris[:, None], tp)
        inner = np.einsum("tqkd,tq->tdk", rt_basis(1, xi_t), tw)
        mat = np.concatenate([mat, inner], axis=1)
    return mat


def _local_solve(mesh, tris, m, edge_moments, interior):
    """Coefficients of the RT^m fields on ``tris`` from their DOF values."""
    mat = _edge_dof_matrix(mesh, tris, m)
    F = mesh.tri_edges[tris]
    rhs = edge_moments[F].reshape(tris.size, -1)
    if m == 1:
        rhs = np.concatenate([rhs, interior[tris]], axis=1)
    return np.linalg.solve(mat, rhs[..., None])[..., 0]


# ----------------------------------------------------------------------------
# degrees of freedom
# ----------------------------------------------------------------------------

def edge_moments_rt(u, theta, topo, data, phase, m):
    """(E, m+1) edge moments of sigma_h^i (zero on edges outside Omega_h^i)."""
    mesh = topo.mesh
    k = data.k[phase]
    h = mesh.h_edge
    g = u.gradients(phase)
    mom = np.zeros((mesh.n_edges, m + 1))
    E = topo.mult_edge[phase]
    mean = _mean_normal_flux(topo, k, g, phase)
    th = theta.values[phase]
    mom[E, 0] = h[E] * mean[E] - 0.5 * k * h[E] * (th[E, 0] + th[E, 1])
    if m == 1:
        # int_F <.> w_1 = 0; nodal sum with w_1 = -1 at endpoint 0, +1 at endpoint 1
        mom[E, 1] = -0.5 * k * h[E] * (th[E, 1] - th[E, 0])
    # outer edges of Omega_h^i: one-sided k grad u . n_F from the inner neighbour
    O = np.flatnonzero(topo.outer_edge[phase])
    if O.size:
        tm, tp = mesh.edge_tris[O, 0], mesh.edge_tris[O, 1]
        inner = np.where(topo.in_tri[phase][tm], tm, tp)
        mom[O, 0] = k * h[O] * np.einsum("ed,ed->e", g[inner], mesh.normals[O])
    return mom


def interior_moments_rt(u, topo, data, phase):
    """(T, 2) interior moments int_T sigma . e_d of the RT1 field."""
    mesh = topo.mesh
    k = data.k[phase]
    w1, w2, _, _ = interface_weights(data.k1, data.k2)
    wi = (w1, w2)[phase]
    g = u.gradients(phase)
    out = k * mesh.area[:, None] * g
    # interface term: - int_{Gamma_T} w_i k_i zeta . n_Gamma [u]
    for t in topo.cut_tris:
        cell = topo.cells[int(t)]
        pts, w = segment_points(cell.gamma[0], cell.gamma[1], 2)
        jump = u.interface_jump(np.full(w.size, t), pts)
        out[t] -= wi * k * float(w @ jump) * cell.normal
    # ghost term: beta h_F int_F k [[d_n u]] eps_{T,F} zeta . n_F
    Fg = np.flatnonzero(topo.ghost_edge[phase])
    if Fg.size:
        tm, tp = mesh.edge_tris[Fg, 0], mesh.edge_tris[Fg, 1]
        n = mesh.normals[Fg]
        jmp = np.einsum("ed,ed->e", g[tm] - g[tp], n)
        s = data.beta * k * mesh.h_edge[Fg] ** 2 * jmp
        np.add.at(out, tm, s[:, None] * n)
        np.add.at(out, tp, -s[:, None] * n)
    out[~topo.in_tri[phase]] = 0.0
    return out


def reconstruct_rt(u, theta, topo=None, data=None, m=0):
    """Pair (sigma_h^1, sigma_h^2) of per-phase RT^m fluxes."""
    topo = u.topology if topo is None else topo
    data = u.data if data is None else data
    if m not in (0, 1):
        raise InvalidArgument(f"unsupported Raviart-Thomas degree {m}")
    mesh = topo.mesh
    out = []
    for i in range(2):
        em = edge_moments_rt(u, theta, topo, data, i, m)
        im = interior_moments_rt(u, topo, data, i) if m == 1 else None
        coef = np.zeros((mesh.n_triangles, n_basis(m)))
        tris = np.flatnonzero(topo.in_tri[i])
        if tris.size:
            coef[tris] = _local_solve(mesh, tris, m, em, im)
        out.append(SubdomainRTFlux(i, m, topo, em, im, coef))
    return tuple(out)


# ----------------------------------------------------------------------------
# source extension and conservation
# ----------------------------------------------------------------------------

@dataclass
class ExtendedSourceEntry:
    """Extension of f^i to T_C^i as a P^m polynomial in the scaled coordinates
    of T; ``moments`` are its defining integrals against the same basis."""

    tri: int
    phase: int
    degree: int
    coef: np.ndarray
    moments: np.ndarray
    area: float


@dataclass
class ExtendedSource:
    degree: int
    entries: dict = field(default_factory=dict)

    def moments(self, t, phase):
        e = self.entries.get((int(t), phase))
        return None if e is None else e.moments


def extension_rhs(t, phase, u, topo, data, m):
    """Defining integrals of the extension of f^i on T_C^i against the scaled
    P^m basis of T."""
    mesh = topo.mesh
    cell = topo.cells[int(t)]
    k1, k2 = data.k
    w1, w2, kg, _ = interface_weights(k1, k2)
    wi = (w1, w2)[phase]
    sign = -1.0 if phase == 0 else 1.0
    h = mesh.h_tri[t]
    pts, w = segment_points(cell.gamma[0], cell.gamma[1], 4)
    tq = np.full(w.size, t)
    g1 = u.gradients(0)[t] @ cell.normal
    g2 = u.gradients(1)[t] @ cell.normal
    flux_jump = k1 * g1 - k2 * g2
    jump = u.interface_jump(tq, pts)
    integrand = flux_jump * (wi - 1.0) + sign * data.gamma * kg / h * jump
    q = pm_basis(m, _scaled(mesh, tq, pts))
    rhs = np.einsum("q,q,qp->p", w, integrand, q)
    # half normal-gradient jumps on the complement fragments of interior edges
    k = data.k[phase]
    g = u.gradients(phase)
    for j in range(3):
        F = mesh.tri_edges[t, j]
        tm, tp = mesh.edge_tris[F]
        if tp < 0 or not topo.mult_edge[phase][F]:
            continue
        seg = topo.edge_seg[F, 1 - phase]
        if np.isnan(seg).any() or topo.edge_len[F, 1 - phase] <= 0.0:
            continue
        fp, fw = segment_points(seg[0], seg[1], 4)
        jmp = k * (g[tm] - g[tp]) @ mesh.normals[F]
        qf = pm_basis(m, _scaled(mesh, np.full(fw.size, t), fp))
        rhs += 0.5 * jmp * (fw @ qf)
    return rhs


def extend_source(t, phase, u, topo=None, data=None, m=0):
    topo = u.topology if topo is None else topo
    data = u.data if data is None else data
    mesh = topo.mesh
    t = int(t)
    if t not in topo.cells:
        raise InvalidArgument(f"triangle {t} is not a cut cell")
    comp = topo.cells[t].complement(phase)
    area = topo.piece_area[t, 1 - phase]
    if area <= SLIVER_TOL * mesh.area[t]:
        raise DegenerateCut(f"triangle {t}: complement region of phase {phase + 1} is degenerate")
    rhs = extension_rhs(t, phase, u, topo, data, m)
    pts, w = polygon_points(comp, 2 * m)
    q = pm_basis(m, _scaled(mesh, np.full(w.size, t), pts))
    M = np.einsum("q,qa,qb->ab", w, q, q)
    coef = np.linalg.solve(M, rhs)
    return ExtendedSourceEntry(t, phase, m, coef, rhs, float(area))


def extended_sources(u, topo=None, data=None, m=0):
    topo = u.topology if topo is None else topo
    data = u.data if data is None else data
    ext = ExtendedSource(m)
    for t in topo.cut_tris:
        for i in range(2):
            ext.entries[(int(t), i)] = extend_source(t, i, u, topo, data, m)
    return ext


def projected_source(f_ext, phase, topo, data, m):
    """(T, m_dim) coefficients of pi_T^m of the (extended) source of phase i."""
    mesh = topo.mesh
    dim = 1 if m == 0 else 3
    mom = np.zeros((mesh.n_triangles, dim))
    tri, pts, w = phase_points(topo, phase, 4)
    if tri.size:
        fq = np.asarray(data.source(phase)(pts[:, 0], pts[:, 1]), float) * w
        np.add.at(mom, tri, fq[:, None] * pm_basis(m, _scaled(mesh, tri, pts)))
    for (t, i), e in f_ext.entries.items():
        if i == phase:
            mom[t] += e.moments
    return np.linalg.solve(_mass_pm(mesh, m), mom[..., None])[..., 0]


def _mass_pm(mesh, m):
    tp, tw = triangles_points(mesh.tri_coords(), 2)
    q = pm_basis(m, _scaled(mesh, np.arange(mesh.n_triangles)[:, None], tp))
    return np.einsum("tq,tqa,tqb->tab", tw, q, q)


def source_norm(topo, data, degree=4):
    """||f||_Omega with f = f^i on Omega^i."""
    total = 0.0
    for i in range(2):
        tri, pts, w = phase_points(topo, i, degree)
        if tri.size:
            total += float(w @ np.asarray(data.source(i)(pts[:, 0], pts[:, 1]), float) ** 2)
    return float(np.sqrt(total))


@dataclass
class ConservationAudit:
    residual: np.ndarray
    scale: float

    @property
    def max(self):
        r = self.residual[~np.isnan(self.residual)]
        return float(r.max(initial=0.0))

    @property
    def relative(self):
        return self.max / self.scale if self.scale > 0 else self.max


def conservation_audit_rt(sigma, f_ext, topo, data):
    """Per-cell ||div sigma_h^i + pi_T^m f^i||_T on T_h^i (nan elsewhere)."""
    mesh = topo.mesh
    m = sigma.degree
    pi_f = projected_source(f_ext, sigma.phase, topo, data, m)
    e = sigma.divergence_poly() + pi_f
    M = _mass_pm(mesh, m)
    res = np.sqrt(np.maximum(np.einsum("ta,tab,tb->t", e, M, e), 0.0))
    res[~topo.in_tri[sigma.phase]] = np.nan
    return ConservationAudit(res, source_norm(topo, data))


def interface_jump_rt(sigma1, sigma2, topo):
    """L2 norm over Gamma of (sigma_h^1 - sigma_h^2) . n_Gamma."""
    total = 0.0
    for t in topo.cut_tris:
        cell = topo.cells[int(t)]
        pts, w = segment_points(cell.gamma[0], cell.gamma[1], 4)
        tq = np.full(w.size, t)
        d = sigma1.normal_trace(tq, pts, cell.normal) - sigma2.normal_trace(tq, pts, cell.normal)
        total += float(w @ d ** 2)
    return float(np.sqrt(total))


def write_rt_audit_csv(audits, topo, path):
    """``audits`` is a pair of ConservationAudit (one per phase)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "subdomain", "residual", "cut"])
        for i, a in enumerate(audits):
            for t in np.flatnonzero(topo.in_tri[i]):
                w.writerow([int(t), i + 1, f"{a.residual[t]:.6e}", int(topo.is_cut[t])])
