"""Lowest-order immersed Raviart-Thomas flux, conforming across the interface.

On a cut triangle each phase piece carries an RT0 field a^i + b^i xi, with
xi = (x - c_T) / h_T. The three shape functions are fixed by

* whole-edge flux DOFs (1/h_j) sum_i int_{F_j^i} psi^i . n_j = delta_jl
  (n_j the outward normal of local edge j),
* [psi . n_Gamma] = 0 (constant along the straight segment, one row),
* div psi^1 = div psi^2, i.e. b^1 = b^2,
* zero mean of [k^{-1} psi . t_Gamma] over Gamma_T.
"""
import csv
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCut, UnisolvenceFailure
from .flux_rt import SLIVER_TOL, _local_solve, source_norm
from .cutgeom import phase_points
from .mesh import LOCAL_EDGES
from .multipliers import _mean_normal_flux

COND_TOL = 1e12


@dataclass
class IRTLocalBasis:
    """``coef[l, i] = (a_x, a_y, b)`` of shape function l on phase piece i."""

    cell: int
    center: np.ndarray
    h: float
    coef: np.ndarray
    condition: float

    def value(self, l, phase, pts):
        xi = (np.atleast_2d(pts) - self.center) / self.h
        a = self.coef[l, phase, :2]
        return a[None, :] + self.coef[l, phase, 2] * xi


def _cell_frame(cell):
    xy = cell.vertices
    h = max(np.hypot(*(xy[b] - xy[a])) for a, b in LOCAL_EDGES)
    return xy.mean(axis=0), float(h)


def _outward_normals(xy):
    out = []
    for a, b in LOCAL_EDGES:
        d = xy[b] - xy[a]
        out.append(np.array([d[1], -d[0]]) / np.hypot(*d))
    return np.array(out)


def irt_constraint_matrix(cell, k1, k2):
    """6x6 matrix over (a^1, b^1, a^2, b^2); rows 0-2 are the DOFs, rows 3-5
    the interface constraints."""
    center, h = _cell_frame(cell)
    xy = cell.vertices
    normals = _outward_normals(xy)
    kg = k1 * k2 / (k1 + k2)
    M = np.zeros((6, 6))
    for j, (a, b) in enumerate(LOCAL_EDGES):
        hj = np.hypot(*(xy[b] - xy[a]))
        n = normals[j]
        for i in range(2):
            seg = cell.edge_seg[j][i]
            if seg is None:
                continue
            L = np.hypot(*(seg[1] - seg[0]))
            xm = (0.5 * (seg[0] + seg[1]) - center) / h
            M[j, 3 * i: 3 * i + 3] = L / hj * np.array([n[0], n[1], xm @ n])
    xm = (cell.gamma_mid - center) / h
    nG, tG = cell.normal, cell.tangent
    M[3] = [nG[0], nG[1], xm @ nG, -nG[0], -nG[1], -(xm @ nG)]
    M[4] = [0, 0, 1, 0, 0, -1]
    M[5] = kg * np.array([tG[0] / k1, tG[1] / k1, (xm @ tG) / k1,
                          -tG[0] / k2, -tG[1] / k2, -(xm @ tG) / k2])
    return M, center, h


def irt_local_basis(cell, k1, k2, area_tol=SLIVER_TOL):
    area = cell.piece_area
    total = area.sum()
    if area.min() < area_tol * total:
        raise DegenerateCut(f"cut cell {cell.tri}: phase piece area ratio {area.min() / total:.3e}")
    M, center, h = irt_constraint_matrix(cell, k1, k2)
    if not np.all(np.isfinite(M)):
        raise UnisolvenceFailure(f"cut cell {cell.tri}: non-finite local system", cell=cell.tri)
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond):
        raise UnisolvenceFailure(f"cut cell {cell.tri}: singular local system", cell=cell.tri,
                                 condition=cond)
    if cond > COND_TOL:
        raise DegenerateCut(f"cut cell {cell.tri}: local basis condition {cond:.3e}")
    rhs = np.zeros((6, 3))
    rhs[:3] = np.eye(3)
    X = np.linalg.solve(M, rhs)
    coef = X.T.reshape(3, 2, 3)
    return IRTLocalBasis(cell.tri, center, h, coef, cond)


def local_residuals(basis, cell, k1, k2):
    """|M x - e| for every shape function (6 rows each)."""
    M, _, _ = irt_constraint_matrix(cell, k1, k2)
    rhs = np.zeros((6, 3))
    rhs[:3] = np.eye(3)
    return np.abs(M @ basis.coef.reshape(3, 6).T - rhs)


# ----------------------------------------------------------------------------
# global field
# ----------------------------------------------------------------------------

@dataclass(eq=False)
class GlobalIRTFlux:
    """One flux DOF per edge plus the per-cell fields.

    ``edge_flux[F] = int_F sigma . n_F``; ``coef[T, i] = (a_x, a_y, b)`` of the
    piece in phase i (both rows equal on uncut cells).
    """

    topology: object
    edge_flux: np.ndarray
    coef: np.ndarray
    bases: dict

    @property
    def mesh(self):
        return self.topology.mesh

    @property
    def edge_dof(self):
        return self.edge_flux / self.mesh.h_edge

    def _xi(self, tri, pts):
        mesh = self.mesh
        c = mesh.nodes[mesh.triangles[tri]].mean(axis=-2)
        return (pts - c) / mesh.h_tri[tri][..., None]

    def value(self, tri, pts, phase=None):
        """Flux at points; ``phase`` selects the piece (default: the cell phase)."""
        if phase is None:
            phase = np.maximum(self.topology.tri_phase[tri], 0)
        c = self.coef[tri, phase]
        return c[:, :2] + c[:, 2:3] * self._xi(tri, pts)

    def divergence(self):
        """(T, 2) constant divergence per phase piece."""
        return 2.0 * self.coef[:, :, 2] / self.mesh.h_tri[:, None]


def edge_flux_irt(u, theta, topo, data):
    """int_F sigma_h . n_F for every edge.

    Sum over the phases whose multiplier lives on F of the fragment integral of
    the mean flux minus the whole-edge multiplier integral.
    """
    mesh = topo.mesh
    h = mesh.h_edge
    Q = np.zeros(mesh.n_edges)
    for i in range(2):
        k = data.k[i]
        E = topo.mult_edge[i]
        mean = _mean_normal_flux(topo, k, u.gradients(i), i)
        th = theta.values[i]
        Q[E] += topo.edge_len[E, i] * mean[E] - 0.5 * k * h[E] * (th[E, 0] + th[E, 1])
    return Q


def reconstruct_irt(u, theta, topo=None, data=None):
    topo = u.topology if topo is None else topo
    data = u.data if data is None else data
    mesh = topo.mesh
    Q = edge_flux_irt(u, theta, topo, data)
    coef = np.zeros((mesh.n_triangles, 2, 3))
    unc = np.flatnonzero(~topo.is_cut)
    if unc.size:
        c = _local_solve(mesh, unc, 0, Q[:, None], None)
        coef[unc, 0] = c
        coef[unc, 1] = c
    bases = {}
    for t in topo.cut_tris:
        t = int(t)
        basis = irt_local_basis(topo.cells[t], data.k1, data.k2)
        bases[t] = basis
        F = mesh.tri_edges[t]
        w = mesh.tri_edge_sign[t] * Q[F] / mesh.h_edge[F]
        # the local frame (vertex centroid, h_T) matches the global scaled coordinate
        coef[t] = np.einsum("l,lik->ik", w, basis.coef)
    return GlobalIRTFlux(topo, Q, coef, bases)


# ----------------------------------------------------------------------------
# audits
# ----------------------------------------------------------------------------

@dataclass
class IRTConservationAudit:
    residual: np.ndarray
    scale: float

    @property
    def max(self):
        return float(self.residual.max(initial=0.0))

    @property
    def relative(self):
        return self.max / self.scale if self.scale > 0 else self.max


def conservation_audit_irt(sigma, topo, data):
    """|int_T div sigma + int_{T^1} f^1 + int_{T^2} f^2| / |T| per cell."""
    mesh = topo.mesh
    fint = np.zeros(mesh.n_triangles)
    for i in range(2):
        tri, pts, w = phase_points(topo, i, 4)
        if tri.size:
            np.add.at(fint, tri, np.asarray(data.source(i)(pts[:, 0], pts[:, 1]), float) * w)
    div = np.einsum("ti,ti->t", topo.piece_area, sigma.divergence())
    res = np.abs(div + fint) / mesh.area
    return IRTConservationAudit(res, source_norm(topo, data))


def flux_scale(sigma):
    """max |sigma| over the vertices of every cell (both pieces on cut cells)."""
    mesh = sigma.mesh
    xy = mesh.tri_coords()
    tri = np.repeat(np.arange(mesh.n_triangles), 3)
    pts = xy.reshape(-1, 2)
    vals = [np.hypot(*sigma.value(tri, pts, np.full(tri.size, i)).T) for i in range(2)]
    return float(max(v.max(initial=0.0) for v in vals))


@dataclass
class TransmissionAudit:
    interface_jump: float
    edge_jump: float
    scale: float
    per_cell: dict
    per_edge: dict

    @property
    def relative(self):
        s = self.scale if self.scale > 0 else 1.0
        return self.interface_jump / s, self.edge_jump / s


def transmission_audit(sigma, topo):
    """(max |[sigma . n_Gamma]| on Gamma, max weak-continuity defect on cut edges)."""
    mesh = topo.mesh
    per_cell = {}
    for t in topo.cut_tris:
        cell = topo.cells[int(t)]
        pts = np.array([cell.gamma[0], cell.gamma_mid, cell.gamma[1]])
        tq = np.full(3, t)
        d = (sigma.value(tq, pts, np.zeros(3, np.int64)) -
             sigma.value(tq, pts, np.ones(3, np.int64))) @ cell.normal
        per_cell[int(t)] = float(np.abs(d).max())
    per_edge = {}
    for F in np.flatnonzero(topo.cut_edge & (mesh.edge_tris[:, 1] >= 0)):
        vals = []
        for t in mesh.edge_tris[F]:
            tot = 0.0
            for i in range(2):
                seg = topo.edge_seg[F, i]
                L = topo.edge_len[F, i]
                if L <= 0.0:
                    continue
                mid = 0.5 * (seg[0] + seg[1])
                v = sigma.value(np.array([t]), mid[None], np.array([i]))[0]
                tot += L * (v @ mesh.normals[F])
            vals.append(tot)
        per_edge[int(F)] = abs(vals[0] - vals[1])
    ij = max(per_cell.values(), default=0.0)
    ej = max(per_edge.values(), default=0.0)
    return TransmissionAudit(ij, ej, flux_scale(sigma), per_cell, per_edge)


def write_irt_audit_csv(cons, trans, sigma, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "kind", "residual", "condition"])
        for t, r in enumerate(cons.residual):
            b = sigma.bases.get(t)
            w.writerow([t, "conservation", f"{r:.6e}", "" if b is None else f"{b.condition:.6e}"])
        for t, r in trans.per_cell.items():
            w.writerow([t, "interface_jump", f"{r:.6e}", ""])
        for f, r in trans.per_edge.items():
            w.writerow([f, "edge_continuity", f"{r:.6e}", ""])
