"""Stabilised Nitsche CutFEM for the two-phase diffusion problem (P1).

Each phase carries an independent continuous P1 space on its fictitious
domain, so nodes of cut triangles hold two unknowns. The bilinear form is

    a_h = sum_i (a_i + beta j_i) + a_Gamma

with the volume term on the physical pieces, the ghost penalty on F_g^i and
symmetric Nitsche coupling on the interface segments.
"""
from dataclasses import dataclass, field

import numpy as np

from .cutgeom import barycentric, interface_weights, phase_points
from .errors import InvalidArgument
from .linalg import assemble, solve_spd
from .quadrature import segment_points


def _zero_source(x, y):
    return np.zeros(np.broadcast(x, y).shape)


@dataclass(frozen=True)
class ProblemData:
    k1: float
    k2: float
    f1: object = None
    f2: object = None
    gamma: float = 10.0
    beta: float = 0.1

    def __post_init__(self):
        if not (self.k1 > 0 and self.k2 > 0):
            raise InvalidArgument(f"diffusivities must be positive, got {self.k1}, {self.k2}")
        if not (self.gamma > 0 and self.beta > 0):
            raise InvalidArgument(f"gamma and beta must be positive, got {self.gamma}, {self.beta}")

    @property
    def k(self):
        return (float(self.k1), float(self.k2))

    @property
    def weights(self):
        """(w1, w2, k_gamma, k_max)."""
        return interface_weights(self.k1, self.k2)

    def source(self, phase):
        f = (self.f1, self.f2)[phase]
        return _zero_source if f is None else f

    def with_params(self, **kw):
        vals = dict(k1=self.k1, k2=self.k2, f1=self.f1, f2=self.f2,
                    gamma=self.gamma, beta=self.beta)
        vals.update(kw)
        return ProblemData(**vals)


@dataclass(frozen=True, eq=False)
class DofMap:
    """Unknown numbering. ``node_dof[i, N]`` is the id of node N in phase i
    (-1 when N is not a node of Omega_h^i or lies on the outer boundary)."""

    node_dof: np.ndarray
    dof_node: np.ndarray
    dof_phase: np.ndarray

    @property
    def n_dofs(self):
        return self.dof_node.size

    def phase_slice(self, phase):
        return np.flatnonzero(self.dof_phase == phase)


def build_dofmap(topo):
    mesh = topo.mesh
    node_dof = -np.ones((2, mesh.n_nodes), np.int64)
    nodes, phases = [], []
    start = 0
    for i in range(2):
        keep = np.flatnonzero(topo.node_in[i] & ~mesh.boundary_node)
        node_dof[i, keep] = start + np.arange(keep.size)
        start += keep.size
        nodes.append(keep)
        phases.append(np.full(keep.size, i))
    return DofMap(node_dof, np.concatenate(nodes), np.concatenate(phases))


# ----------------------------------------------------------------------------
# local element contributions, shared with the multiplier residual
# ----------------------------------------------------------------------------

def volume_local(topo, data, phase):
    """(tris, K) with K[t] = k_i |T^i| grad phi_a . grad phi_b."""
    mesh = topo.mesh
    tris = np.flatnonzero(topo.in_tri[phase])
    g = mesh.grads[tris]
    K = data.k[phase] * topo.piece_area[tris, phase][:, None, None] * np.einsum("tad,tbd->tab", g, g)
    return tris, K


def ghost_local(topo, data, phase):
    """Ghost-penalty edges and their normal-derivative jumps.

    Returns (edges, dn_minus, dn_plus, weight): ``dn_minus[e, a]`` is
    grad phi_a . n_F on T_F^- and ``weight = k_i h_F^2`` (beta excluded).
    """
    mesh = topo.mesh
    edges = np.flatnonzero(topo.ghost_edge[phase])
    n = mesh.normals[edges]
    tm, tp = mesh.edge_tris[edges, 0], mesh.edge_tris[edges, 1]
    dm = np.einsum("ead,ed->ea", mesh.grads[tm], n)
    dp = np.einsum("ead,ed->ea", mesh.grads[tp], n)
    return edges, dm, dp, data.k[phase] * mesh.h_edge[edges] ** 2


def nitsche_local(topo, data, t):
    """Local (P, C) 6x6 matrices on cut triangle ``t``; ordering is
    (phase-1 vertices, phase-2 vertices). a_Gamma = gamma P - C."""
    mesh = topo.mesh
    cell = topo.cells[int(t)]
    w1, w2, kg, _ = interface_weights(data.k1, data.k2)
    pts, w = segment_points(cell.gamma[0], cell.gamma[1], 2)
    lam = barycentric(mesh, np.full(w.size, t), pts)
    jump = np.concatenate([lam, -lam], axis=1)
    h = mesh.h_tri[t]
    P = (kg / h) * np.einsum("q,qa,qb->ab", w, jump, jump)
    gn = mesh.grads[t] @ cell.normal
    D = np.concatenate([w1 * data.k1 * gn, w2 * data.k2 * gn])
    J = w @ jump
    C = np.outer(J, D) + np.outer(D, J)
    return P, C


@dataclass(eq=False)
class DiscreteSystem:
    """Assembled operator over the unknowns of ``dofmap``.

    ``A = Avol + beta J + gamma P - C``; ``Avol + J + P`` is the energy-norm
    Gram matrix.
    """

    dofmap: DofMap
    A: object
    rhs: np.ndarray
    Avol: object
    J: object
    P: object
    C: object


def _scatter(dofs, K):
    """Triplets of local matrices K (n, m, m) with global ids dofs (n, m);
    entries touching a constrained (-1) dof are dropped."""
    m = dofs.shape[1]
    r = np.repeat(dofs, m, axis=1).ravel()
    c = np.tile(dofs, (1, m)).ravel()
    v = K.reshape(-1)
    keep = (r >= 0) & (c >= 0)
    return r[keep], c[keep], v[keep]


def _cat(parts):
    if not parts:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    return tuple(np.concatenate(x) for x in zip(*parts))


def load_vector(topo, data, dofmap, degree=4):
    mesh = topo.mesh
    b = np.zeros(dofmap.n_dofs)
    for i in range(2):
        tri, pts, w = phase_points(topo, i, degree)
        if tri.size == 0:
            continue
        fq = np.asarray(data.source(i)(pts[:, 0], pts[:, 1]), float) * w
        lam = barycentric(mesh, tri, pts)
        dofs = dofmap.node_dof[i, mesh.triangles[tri]]
        vals = lam * fq[:, None]
        keep = dofs >= 0
        np.add.at(b, dofs[keep], vals[keep])
    return b


def assemble_system(topo, dofmap, data):
    mesh = topo.mesh
    n = dofmap.n_dofs
    vol, gh, pen, con = [], [], [], []
    for i in range(2):
        tris, K = volume_local(topo, data, i)
        vol.append(_scatter(dofmap.node_dof[i, mesh.triangles[tris]], K))
        edges, dm, dp, wgt = ghost_local(topo, data, i)
        if edges.size:
            jump = np.concatenate([dm, -dp], axis=1)
            Kg = wgt[:, None, None] * np.einsum("ea,eb->eab", jump, jump)
            tm, tp = mesh.edge_tris[edges, 0], mesh.edge_tris[edges, 1]
            nodes = np.concatenate([mesh.triangles[tm], mesh.triangles[tp]], axis=1)
            gh.append(_scatter(dofmap.node_dof[i, nodes], Kg))
    if topo.cut_tris.size:
        Ps, Cs, ds = [], [], []
        for t in topo.cut_tris:
            P, C = nitsche_local(topo, data, t)
            tri = mesh.triangles[t]
            Ps.append(P)
            Cs.append(C)
            ds.append(np.concatenate([dofmap.node_dof[0, tri], dofmap.node_dof[1, tri]]))
        ds = np.array(ds)
        pen.append(_scatter(ds, np.array(Ps)))
        con.append(_scatter(ds, np.array(Cs)))
    Avol = assemble(_cat(vol), n, symmetric=True)
    J = assemble(_cat(gh), n, symmetric=True)
    P = assemble(_cat(pen), n, symmetric=True)
    C = assemble(_cat(con), n, symmetric=True)
    rows, cols, vals = [], [], []
    for M, s in ((Avol, 1.0), (J, data.beta), (P, data.gamma), (C, -1.0)):
        r, c, v = M.coo()
        rows.append(r)
        cols.append(c)
        vals.append(s * v)
    A = assemble((np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)), n,
                 symmetric=True)
    return DiscreteSystem(dofmap, A, load_vector(topo, data, dofmap), Avol, J, P, C)


# ----------------------------------------------------------------------------
# discrete solution
# ----------------------------------------------------------------------------

@dataclass(eq=False)
class PrimalField:
    topology: object
    dofmap: DofMap
    coef: np.ndarray
    data: ProblemData
    system: DiscreteSystem = field(default=None, repr=False)
    info: dict = field(default_factory=dict)

    def nodal(self, phase):
        """Nodal values of u_h^i (zero at outer-boundary nodes, nan off Omega_h^i)."""
        topo = self.topology
        out = np.full(topo.mesh.n_nodes, np.nan)
        out[topo.node_in[phase]] = 0.0
        d = self.dofmap.node_dof[phase]
        on = d >= 0
        out[on] = self.coef[d[on]]
        return out

    def cell_values(self, phase):
        """(T, 3) vertex values per triangle; zero on triangles outside T_h^i."""
        v = np.nan_to_num(self.nodal(phase))[self.topology.mesh.triangles]
        v[~self.topology.in_tri[phase]] = 0.0
        return v

    def gradients(self, phase):
        """(T, 2) constant gradient of u_h^i per triangle (zero outside T_h^i)."""
        return np.einsum("ta,tad->td", self.cell_values(phase), self.topology.mesh.grads)

    def evaluate(self, phase, tri, pts):
        lam = barycentric(self.topology.mesh, tri, pts)
        return np.einsum("qa,qa->q", lam, self.cell_values(phase)[tri])

    def interface_jump(self, tri, pts):
        return self.evaluate(0, tri, pts) - self.evaluate(1, tri, pts)


def solve_primal(topo, data, tol=1e-10, system=None):
    dofmap = build_dofmap(topo) if system is None else system.dofmap
    system = assemble_system(topo, dofmap, data) if system is None else system
    if dofmap.n_dofs == 0 or not np.any(system.rhs):
        coef = np.zeros(dofmap.n_dofs)
        info = {"iterations": 0, "residual": 0.0}
    else:
        coef, info = solve_spd(system.A, system.rhs, tol=tol, return_info=True)
    return PrimalField(topo, dofmap, coef, data, system, info)


def galerkin_residual(field):
    """max_j |a_h(u_h, phi_j) - l_h(phi_j)| relative to max |l_h(phi_j)|."""
    s = field.system
    r = s.A @ field.coef - s.rhs
    scale = np.abs(s.rhs).max() if s.rhs.size else 0.0
    return float(np.abs(r).max() / scale) if scale > 0 else float(np.abs(r).max(initial=0.0))


def energy_norm(field, topo=None, data=None):
    s = field.system
    c = field.coef
    val = c @ (s.Avol @ c) + c @ (s.J @ c) + c @ (s.P @ c)
    return float(np.sqrt(max(val, 0.0)))


def energy_error(exact_grad, field, topo=None, data=None, degree=4):
    """|u - u_h|_{1,K} on the physical pieces. ``exact_grad[i](x, y)`` returns
    (gx, gy) for phase i."""
    topo = field.topology if topo is None else topo
    data = field.data if data is None else data
    total = 0.0
    for i in range(2):
        tri, pts, w = phase_points(topo, i, degree)
        if tri.size == 0:
            continue
        gx, gy = exact_grad[i](pts[:, 0], pts[:, 1])
        gh = field.gradients(i)[tri]
        d2 = (np.asarray(gx) - gh[:, 0]) ** 2 + (np.asarray(gy) - gh[:, 1]) ** 2
        total += data.k[i] * float(w @ d2)
    return float(np.sqrt(total))


def l2_error(exact, field, topo=None, degree=4):
    topo = field.topology if topo is None else topo
    total = 0.0
    for i in range(2):
        tri, pts, w = phase_points(topo, i, degree)
        if tri.size == 0:
            continue
        d = np.asarray(exact[i](pts[:, 0], pts[:, 1])) - field.evaluate(i, tri, pts)
        total += float(w @ d ** 2)
    return float(np.sqrt(total))
