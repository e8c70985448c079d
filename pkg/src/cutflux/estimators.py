"""A posteriori error indicators built from a recovered flux.

``sigma`` is either a :class:`GlobalIRTFlux` or a ``(sigma1, sigma2)`` pair of
subdomain RT fields; in both cases the phase-i piece is evaluated on T^i.
"""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .cutgeom import gamma_points, interface_weights, phase_points
from .cutfem import energy_error
from .quadrature import segment_points, triangles_points

RELIABILITY_TOL = 1e-6


def _flux_value(sigma, phase, tri, pts):
    if isinstance(sigma, (tuple, list)):
        return sigma[phase].value(tri, pts)
    return sigma.value(tri, pts, np.full(np.shape(tri), phase))


def _is_irt(sigma):
    return not isinstance(sigma, (tuple, list))


def eta_cell(sigma, u, topo=None, data=None, degree=4):
    """eta_T = ||K^{-1/2}(sigma_h - K grad u_h)||_T, summed over the phase pieces."""
    topo = u.topology if topo is None else topo
    data = u.data if data is None else data
    eta2 = np.zeros(topo.mesh.n_triangles)
    for i in range(2):
        tri, pts, w = phase_points(topo, i, degree)
        if tri.size == 0:
            continue
        k = data.k[i]
        d = _flux_value(sigma, i, tri, pts) - k * u.gradients(i)[tri]
        np.add.at(eta2, tri, w * np.einsum("qd,qd->q", d, d) / k)
    return np.sqrt(eta2)


def _edge_trace_jump(sigma, topo, F, degree):
    """Quadrature of [[sigma . n_F]] over the fragments of an interior edge F."""
    mesh = topo.mesh
    tm, tp = mesh.edge_tris[F]
    n = mesh.normals[F]
    vals, wts = [], []
    for i in range(2):
        if topo.edge_len[F, i] <= 0.0:
            continue
        a, b = topo.edge_seg[F, i]
        pts, w = segment_points(a, b, degree)
        jm = _flux_value(sigma, i, np.full(len(w), tm), pts) @ n
        jp = _flux_value(sigma, i, np.full(len(w), tp), pts) @ n
        vals.append(jm - jp)
        wts.append(w)
    return np.concatenate(vals), np.concatenate(wts)


def eta_interface(sigma, u, topo=None, data=None, degree=4, jump_domain="interface"):
    """Returns ``(edges, eta_F, cut_cells, eta_tilde)``.

    ``jump_domain="interface"`` (default): sqrt(k_max)/h_T ||[u_h]||_{Gamma_T}.
    ``"cell"``: sqrt(k_max)/h_T ||u_h^1 - u_h^2||_T over the whole cut triangle.
    ``"trace"``: sqrt(k_max/h_T) ||[u_h]||_{Gamma_T}, the trace-scaled variant.
    """
    topo = u.topology if topo is None else topo
    data = u.data if data is None else data
    mesh = topo.mesh
    kg = interface_weights(data.k1, data.k2)[2]
    edges = np.flatnonzero(topo.cut_edge & (mesh.edge_tris[:, 1] >= 0))
    eta_f = np.zeros(edges.size)
    for j, F in enumerate(edges):
        v, w = _edge_trace_jump(sigma, topo, F, degree)
        dev = v - (w @ v) / w.sum()
        eta_f[j] = np.sqrt(mesh.h_edge[F] / kg * float(w @ dev ** 2))
    cells = np.asarray(topo.cut_tris, np.int64)
    jump2 = np.zeros(mesh.n_triangles)
    if cells.size:
        if jump_domain == "cell":
            xy = mesh.tri_coords(cells)
            pts, w = triangles_points(xy, max(degree, 2))
            tri = np.repeat(cells, pts.shape[1])
            pts = pts.reshape(-1, 2)
            w = w.reshape(-1)
            d = u.evaluate(0, tri, pts) - u.evaluate(1, tri, pts)
        elif jump_domain in ("interface", "trace"):
            tri, pts, w = gamma_points(topo, degree)
            d = u.interface_jump(tri, pts)
        else:
            raise ValueError(f"unknown jump domain {jump_domain!r}")
        np.add.at(jump2, tri, w * d ** 2)
    kmax = max(data.k1, data.k2)
    eta_t = np.sqrt(kmax * jump2[cells]) / mesh.h_tri[cells]
    if jump_domain == "trace":
        eta_t = eta_t * np.sqrt(mesh.h_tri[cells])
    return edges, eta_f, cells, eta_t


def cell_weights(topo, data):
    """k_T: the phase coefficient on uncut cells, the harmonic mean on cut ones."""
    kg = interface_weights(data.k1, data.k2)[2]
    k = np.where(topo.tri_phase == 1, data.k2, data.k1).astype(float)
    k[topo.is_cut] = kg
    return k


def data_oscillation(topo, data, degree=4):
    """Per-cell (h_T^2/k_T) ||f - pi_T^0 f||_T^2 contributions and eps(Omega)."""
    mesh = topo.mesh
    parts = []
    fint = np.zeros(mesh.n_triangles)
    for i in range(2):
        tri, pts, w = phase_points(topo, i, degree)
        fv = np.asarray(data.source(i)(pts[:, 0], pts[:, 1]), float) * np.ones(w.size)
        np.add.at(fint, tri, w * fv)
        parts.append((tri, w, fv))
    mean = fint / mesh.area
    dev2 = np.zeros(mesh.n_triangles)
    for tri, w, fv in parts:
        np.add.at(dev2, tri, w * (fv - mean[tri]) ** 2)
    contrib = mesh.h_tri ** 2 / cell_weights(topo, data) * dev2
    return contrib, float(np.sqrt(contrib.sum()))


def interface_flux_jump(sigma, topo, degree=4):
    """L2 norm of [sigma . n_Gamma] over Gamma (reported for subdomain RT fluxes)."""
    tri, pts, w = gamma_points(topo, degree)
    if tri.size == 0:
        return 0.0
    n = np.array([topo.cells[int(t)].normal for t in tri])
    d = np.einsum("qd,qd->q", _flux_value(sigma, 0, tri, pts) - _flux_value(sigma, 1, tri, pts), n)
    return float(np.sqrt(w @ d ** 2))


@dataclass
class EstimatorReport:
    eta_T: np.ndarray
    edges: np.ndarray
    eta_F: np.ndarray
    cut_cells: np.ndarray
    eta_tilde: np.ndarray
    oscillation: np.ndarray
    exact_error: float = None
    flux: str = "irt0"
    extra: dict = field(default_factory=dict)

    @property
    def eta(self):
        return float(np.sqrt(np.sum(self.eta_T ** 2)))

    @property
    def eta_gamma(self):
        return float(np.sqrt(np.sum(self.eta_F ** 2) + np.sum(self.eta_tilde ** 2)))

    @property
    def epsilon(self):
        return float(np.sqrt(np.sum(self.oscillation)))

    @property
    def total(self):
        return self.eta + self.eta_gamma + self.epsilon

    @property
    def exact_case(self):
        """True when the exact error vanishes (index undefined)."""
        return self.exact_error is not None and self.exact_error == 0.0

    @property
    def effectivity(self):
        if self.exact_error is None or self.exact_error == 0.0:
            return None
        return self.total / self.exact_error

    @property
    def reliable(self):
        """Upper bound total >= exact error, with the interface constant set to 1."""
        if self.exact_error is None:
            return None
        return self.total >= (1.0 - RELIABILITY_TOL) * self.exact_error

    def summary(self):
        out = {
            "flux": self.flux,
            "eta": self.eta,
            "eta_gamma": self.eta_gamma,
            "epsilon": self.epsilon,
            "estimator": self.total,
            "exact_error": self.exact_error,
            "effectivity": self.effectivity,
            "reliable_C1": self.reliable,
            "exact_case": self.exact_case,
            "n_cells": int(self.eta_T.size),
            "n_cut_edges": int(self.edges.size),
            "n_cut_cells": int(self.cut_cells.size),
        }
        out.update(self.extra)
        return out

    def write_csv(self, path):
        tilde = np.zeros(self.eta_T.size)
        tilde[self.cut_cells] = self.eta_tilde
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "id", "eta_T", "eta_tilde", "oscillation", "eta_F"])
            for t in range(self.eta_T.size):
                w.writerow(["cell", t, f"{self.eta_T[t]:.6e}", f"{tilde[t]:.6e}",
                            f"{self.oscillation[t]:.6e}", ""])
            for F, v in zip(self.edges, self.eta_F):
                w.writerow(["edge", int(F), "", "", "", f"{v:.6e}"])

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def estimate(sigma, u, topo=None, data=None, exact_grad=None, degree=4, jump_domain="interface"):
    """Assemble every indicator; ``exact_grad`` adds the true energy error."""
    topo = u.topology if topo is None else topo
    data = u.data if data is None else data
    eta_t = eta_cell(sigma, u, topo, data, degree)
    edges, eta_f, cells, eta_tl = eta_interface(sigma, u, topo, data, degree, jump_domain)
    osc, _ = data_oscillation(topo, data, degree)
    err = None if exact_grad is None else energy_error(exact_grad, u, topo, data, degree)
    extra = {"jump_domain": jump_domain}
    if not _is_irt(sigma):
        extra["interface_flux_jump"] = interface_flux_jump(sigma, topo, degree)
    return EstimatorReport(eta_t, edges, eta_f, cells, eta_tl, osc, err,
                           "irt0" if _is_irt(sigma) else f"rt{sigma[0].degree}", extra)


def effectivity(report, exact_grad, u, degree=4):
    """Attach the exact energy error to a report."""
    report.exact_error = energy_error(exact_grad, u, degree=degree)
    return report
