"""Interface classification, triangle clipping and the coefficient weights.

Phase 1 lies on the left of the directed interface polyline and ``n_Gamma``
(the right-hand normal) points from phase 1 into phase 2. Phases are indexed
0 and 1 in arrays.
"""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateCut, InvalidArgument, UnsupportedGeometry
from .mesh import LOCAL_EDGES
from .quadrature import polygon_area, polygon_points, segment_points, triangles_points

REL_TOL = 1e-12


def interface_weights(k1, k2):
    """Return ``(w1, w2, k_gamma, k_max)`` for diffusivities ``k1, k2``."""
    if not (k1 > 0 and k2 > 0):
        raise InvalidArgument(f"diffusivities must be positive, got {k1}, {k2}")
    s = k1 + k2
    return k2 / s, k1 / s, k1 * k2 / s, max(k1, k2)


class InterfacePolyline:
    """Directed polyline; ``closed=True`` joins the last vertex to the first."""

    def __init__(self, vertices, closed=False):
        v = np.asarray(vertices, float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 2:
            raise InvalidArgument("interface needs at least two (x, y) vertices")
        if closed and v.shape[0] < 3:
            raise InvalidArgument("a closed interface needs at least three vertices")
        seg = np.diff(np.vstack([v, v[:1]]) if closed else v, axis=0)
        if np.any(np.hypot(seg[:, 0], seg[:, 1]) == 0.0):
            raise InvalidArgument("interface has a zero-length segment")
        self.vertices = v
        self.closed = bool(closed)
        self._check_simple()

    @classmethod
    def line(cls, p0, p1):
        return cls([p0, p1])

    @property
    def n_segments(self):
        return self.vertices.shape[0] if self.closed else self.vertices.shape[0] - 1

    def segments(self, extend=0.0):
        """(m, 2, 2) segment endpoints; open ends pushed out by ``extend``."""
        v = self.vertices
        if self.closed:
            return np.stack([v, np.roll(v, -1, axis=0)], axis=1)
        seg = np.stack([v[:-1], v[1:]], axis=1).copy()
        if extend > 0.0:
            for k, sgn in ((0, -1.0), (-1, 1.0)):
                d = seg[k, 1] - seg[k, 0]
                d = d / np.hypot(*d)
                end = 0 if sgn < 0 else 1
                seg[k, end] = seg[k, end] + sgn * extend * d
        return seg

    def _check_simple(self):
        seg = self.segments()
        m = seg.shape[0]
        for a in range(m):
            for b in range(a + 1, m):
                adjacent = b == a + 1 or (self.closed and a == 0 and b == m - 1)
                if adjacent:
                    continue
                if _segments_cross(seg[a], seg[b]):
                    raise InvalidArgument("interface polyline self-intersects")

    def signed_side(self, pts, extend):
        """Signed distance like quantity: < 0 on the phase-1 side, > 0 on phase 2.

        The magnitude is the Euclidean distance to the (extended) polyline.
        """
        pts = np.atleast_2d(np.asarray(pts, float))
        seg = self.segments(extend)
        a = seg[:, 0]
        d = seg[:, 1] - seg[:, 0]
        L2 = np.einsum("md,md->m", d, d)
        nrm = np.stack([d[:, 1], -d[:, 0]], axis=1) / np.sqrt(L2)[:, None]
        rel = pts[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("pmd,md->pm", rel, d) / L2, 0.0, 1.0)
        diff = rel - t[..., None] * d[None]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        k = np.argmin(dist, axis=1)
        idx = np.arange(pts.shape[0])
        tk = t[idx, k]
        m = seg.shape[0]
        normal = nrm[k].copy()
        # at a shared vertex the side follows the sum of the adjacent normals
        at_start = tk <= 0.0
        at_end = tk >= 1.0
        prev = k - 1
        nxt = k + 1
        if self.closed:
            prev %= m
            nxt %= m
        ok = at_start & (prev >= 0)
        normal[ok] += nrm[prev[ok]]
        ok = at_end & (nxt < m)
        normal[ok] += nrm[nxt[ok]]
        s = np.einsum("pd,pd->p", rel[idx, k], normal)
        return np.where(s > 0, 1.0, -1.0) * dist[idx, k]

    def write(self, path):
        with open(path, "w") as fh:
            tag = " closed" if self.closed else ""
            fh.write(f"interface {self.vertices.shape[0]}{tag}\n")
            for x, y in self.vertices:
                fh.write(f"{float(x)!r} {float(y)!r}\n")


def read_interface(path, closed=False):
    """``interface <n> [closed]`` followed by n lines ``x y``; ``closed=True``
    forces a loop even without the tag."""
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        if lines[0][0] != "interface":
            raise InvalidArgument("interface file must start with 'interface <n>'")
        n = int(lines[0][1])
        closed = closed or lines[0][2:3] == ["closed"]
        v = np.array([[float(c) for c in ln[:2]] for ln in lines[1:1 + n]])
    except (IndexError, ValueError) as exc:
        raise InvalidArgument(f"malformed interface file {path}: {exc}") from exc
    if v.shape != (n, 2):
        raise InvalidArgument(f"malformed interface file {path}: vertex count mismatch")
    return InterfacePolyline(v, closed=closed)


def _segments_cross(s, r):
    def orient(p, q, x):
        return (q[0] - p[0]) * (x[1] - p[1]) - (q[1] - p[1]) * (x[0] - p[0])
    d1 = orient(r[0], r[1], s[0])
    d2 = orient(r[0], r[1], s[1])
    d3 = orient(s[0], s[1], r[0])
    d4 = orient(s[0], s[1], r[1])
    return d1 * d2 < 0 and d3 * d4 < 0


@dataclass
class CutCell:
    """Clipped geometry of one cut triangle.

    ``polys[i]`` is the CCW polygon ``T^(i+1)``; ``gamma`` runs along the interface
    direction so that ``normal`` (right-hand) points into phase 2.
    ``edge_frag[j, i]`` is the length of local edge ``j`` inside phase ``i`` and
    ``edge_seg[j][i]`` the corresponding sub-segment (or ``None``).
    """

    tri: int
    vertices: np.ndarray
    vertex_phase: np.ndarray
    polys: tuple
    gamma: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    edge_frag: np.ndarray
    edge_seg: list = field(repr=False)

    @property
    def gamma_length(self):
        return float(np.hypot(*(self.gamma[1] - self.gamma[0])))

    @property
    def gamma_mid(self):
        return 0.5 * (self.gamma[0] + self.gamma[1])

    @property
    def piece_area(self):
        return np.array([polygon_area(self.polys[0]), polygon_area(self.polys[1])])

    def complement(self, phase):
        """T_C^i = T minus T^i, i.e. the other phase's polygon."""
        return self.polys[1 - phase]


def _build_cut_cell(tri, xy, phase, crossing):
    """``phase[j]`` in {0, 1} per vertex; ``crossing[j]`` point on local edge j or None."""
    polys = ([], [])
    edge_frag = np.zeros((3, 2))
    edge_seg = []
    pts = []
    for j, (a, b) in enumerate(LOCAL_EDGES):
        polys[phase[a]].append(xy[a])
        p = crossing[j]
        if p is None:
            edge_frag[j, phase[a]] = np.hypot(*(xy[b] - xy[a]))
            seg = [None, None]
            seg[phase[a]] = np.array([xy[a], xy[b]])
        else:
            polys[0].append(p)
            polys[1].append(p)
            pts.append(p)
            seg = [None, None]
            seg[phase[a]] = np.array([xy[a], p])
            seg[phase[b]] = np.array([p, xy[b]])
            edge_frag[j, phase[a]] = np.hypot(*(p - xy[a]))
            edge_frag[j, phase[b]] = np.hypot(*(xy[b] - p))
        edge_seg.append(seg)
    if len(pts) != 2:
        raise UnsupportedGeometry(f"triangle {tri}: interface crosses {len(pts)} edges")
    polys = tuple(np.array(p) for p in polys)
    if any(p.shape[0] < 3 or p.shape[0] > 4 for p in polys):
        raise UnsupportedGeometry(f"triangle {tri}: clipped polygon is not a triangle or quad")
    g = np.array(pts)
    t = g[1] - g[0]
    n = np.array([t[1], -t[0]])
    # orient so that the normal points into phase 2
    probe = xy[int(np.flatnonzero(phase == 1)[0])]
    if (probe - g[0]) @ n < 0:
        g = g[::-1]
        t = -t
        n = -n
    L = np.hypot(*t)
    return CutCell(tri, xy, phase, polys, g, n / L, t / L, edge_frag, edge_seg)


def _edge_crossings(p0, p1, seg, tol):
    """Crossing parameter of edges p0->p1 with polyline segments.

    Returns (s, count): s the parameter of the first crossing (nan if none) and the
    number of distinct crossings per edge.
    """
    d = p1 - p0
    e = seg[:, 1] - seg[:, 0]
    count = np.zeros(p0.shape[0], np.int64)
    s_out = np.full(p0.shape[0], np.nan)
    for k in range(seg.shape[0]):
        a = seg[k, 0]
        ek = e[k]
        den = d[:, 0] * ek[1] - d[:, 1] * ek[0]
        w = a[None, :] - p0
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (w[:, 0] * ek[1] - w[:, 1] * ek[0]) / den
            u = (w[:, 0] * d[:, 1] - w[:, 1] * d[:, 0]) / den
        hit = (den != 0) & (s > 0) & (s < 1) & (u >= -tol) & (u <= 1 + tol)
        dup = hit & ~np.isnan(s_out) & (np.abs(s - s_out) <= tol)
        new = hit & ~dup
        first = new & np.isnan(s_out)
        s_out[first] = s[first]
        count[new] += 1
    return s_out, count


@dataclass(eq=False)
class CutTopology:
    """Classification of a mesh against an interface (phase index 0 / 1).

    tri_phase : 0 or 1 for uncut triangles, -1 for cut ones.
    in_tri[i] : T_h^i mask.   in_edge[i] : F_h^i mask.   cut_edge : F_h^Gamma mask.
    mult_edge[i] : edges carrying the phase-i multiplier (interior edges of
        Omega_h^i plus its edges on the outer boundary).
    ghost_edge[i] : F_g^i.   outer_edge[i] : boundary edges of Omega_h^i that are
        interior to the mesh (fluxes there are one-sided).
    node_in[i] : nodes of Omega_h^i.   interior_node[i] : nodes interior to Omega_h^i.
    circulation_node[i] : nodes whose whole patch lies in T_h^i (interior nodes
        plus outer-boundary nodes); the multiplier circulation constraint lives there.
    edge_seg[i] : (E, 2, 2) fragment F^i endpoints (nan when empty).
    """

    mesh: object
    interface: object
    node_phase: np.ndarray
    tri_phase: np.ndarray
    cells: dict
    cut_tris: np.ndarray
    edge_len: np.ndarray
    edge_seg: np.ndarray
    cut_edge: np.ndarray
    in_tri: tuple
    in_edge: tuple
    mult_edge: tuple
    ghost_edge: tuple
    outer_edge: tuple
    node_in: tuple
    interior_node: tuple
    circulation_node: tuple
    piece_area: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def is_cut(self):
        return self.tri_phase < 0

    def phase_sets(self):
        return {
            "T1": set(np.flatnonzero(self.in_tri[0]).tolist()),
            "T2": set(np.flatnonzero(self.in_tri[1]).tolist()),
            "TG": set(self.cut_tris.tolist()),
            "F1": set(np.flatnonzero(self.in_edge[0]).tolist()),
            "F2": set(np.flatnonzero(self.in_edge[1]).tolist()),
            "FG": set(np.flatnonzero(self.cut_edge).tolist()),
            "Fg1": set(np.flatnonzero(self.ghost_edge[0]).tolist()),
            "Fg2": set(np.flatnonzero(self.ghost_edge[1]).tolist()),
        }


def _point_in_mesh(mesh, p, tol):
    xy = mesh.tri_coords()
    g = mesh.grads
    lam = np.einsum("tjd,d->tj", g, p) + 1.0 - np.einsum("tjd,tjd->tj", g, xy)
    # barycentric lambda_j(p) = 1 + grad_j . (p - x_j)
    return lam.min(axis=1)


def classify(mesh, interface, tol=None):
    """Classify triangles and edges and clip every cut triangle."""
    diam = mesh.diameter
    tol = REL_TOL * diam if tol is None else tol
    ext = 4.0 * diam
    # open ends on the mesh boundary are extended so they exit the mesh cleanly
    extend = 0.0
    if not interface.closed:
        ends = [interface.vertices[0], interface.vertices[-1]]
        for p in ends:
            depth = _point_in_mesh(mesh, p, tol).max()
            if depth > 1e-10:
                raise UnsupportedGeometry(f"open interface ends inside the domain at {p}")
        extend = ext
    segs = interface.segments(extend)

    # interior polyline vertices must not sit strictly inside a triangle
    inner = interface.vertices if interface.closed else interface.vertices[1:-1]
    for p in inner:
        lam = _point_in_mesh(mesh, p, tol)
        if lam.max() > 1e-10:
            raise UnsupportedGeometry(
                f"interface vertex {p} lies inside triangle {int(np.argmax(lam))}")

    side = interface.signed_side(mesh.nodes, extend)
    if np.any(np.abs(side) < tol):
        bad = int(np.argmin(np.abs(side)))
        raise DegenerateCut(f"mesh node {bad} lies on the interface (distance {abs(side[bad]):.3e})")
    node_phase = (side > 0).astype(np.int64)

    edges = mesh.edges
    p0 = mesh.nodes[edges[:, 0]]
    p1 = mesh.nodes[edges[:, 1]]
    s_cross, count = _edge_crossings(p0, p1, segs, tol / diam)
    if np.any(count > 1):
        raise UnsupportedGeometry(f"interface crosses edge {int(np.argmax(count))} more than once")
    differ = node_phase[edges[:, 0]] != node_phase[edges[:, 1]]
    if np.any(differ != (count == 1)):
        bad = int(np.flatnonzero(differ != (count == 1))[0])
        raise UnsupportedGeometry(f"edge {bad}: crossing count inconsistent with endpoint sides")
    cut_edge = count == 1
    hF = mesh.h_edge
    crossing = p0 + s_cross[:, None] * (p1 - p0)
    if np.any(cut_edge):
        near = np.minimum(s_cross[cut_edge], 1 - s_cross[cut_edge]) * hF[cut_edge]
        if near.min() < tol:
            raise DegenerateCut("interface passes through a mesh vertex")

    E = mesh.n_edges
    edge_len = np.zeros((E, 2))
    edge_seg = np.full((E, 2, 2, 2), np.nan)
    ph0 = node_phase[edges[:, 0]]
    unc = ~cut_edge
    edge_len[unc, ph0[unc]] = hF[unc]
    edge_seg[unc, ph0[unc]] = np.stack([p0[unc], p1[unc]], axis=1)
    ce = np.flatnonzero(cut_edge)
    edge_len[ce, ph0[ce]] = s_cross[ce] * hF[ce]
    edge_len[ce, 1 - ph0[ce]] = (1 - s_cross[ce]) * hF[ce]
    edge_seg[ce, ph0[ce]] = np.stack([p0[ce], crossing[ce]], axis=1)
    edge_seg[ce, 1 - ph0[ce]] = np.stack([crossing[ce], p1[ce]], axis=1)

    ncut_edges = cut_edge[mesh.tri_edges].sum(axis=1)
    if np.any((ncut_edges != 0) & (ncut_edges != 2)):
        raise UnsupportedGeometry("a triangle is crossed on an odd number of edges")
    is_cut = ncut_edges == 2
    cent_side = interface.signed_side(mesh.centroids(), extend)
    tri_phase = np.where(cent_side > 0, 1, 0)
    tri_phase[is_cut] = -1
    # uncut triangles must agree with their vertex phases
    vp = node_phase[mesh.triangles]
    unc_t = ~is_cut
    if np.any(vp[unc_t].min(axis=1) != vp[unc_t].max(axis=1)):
        raise UnsupportedGeometry("uncut triangle with vertices on both sides of the interface")
    tri_phase[unc_t] = vp[unc_t, 0]

    cells = {}
    cut_tris = np.flatnonzero(is_cut)
    piece_area = np.zeros((mesh.n_triangles, 2))
    piece_area[unc_t, tri_phase[unc_t]] = mesh.area[unc_t]
    for t in cut_tris:
        xy = mesh.nodes[mesh.triangles[t]]
        cross = []
        for j in range(3):
            f = mesh.tri_edges[t, j]
            cross.append(crossing[f] if cut_edge[f] else None)
        cell = _build_cut_cell(int(t), xy, node_phase[mesh.triangles[t]], cross)
        cells[int(t)] = cell
        piece_area[t] = cell.piece_area

    in_tri = tuple((tri_phase == i) | is_cut for i in range(2))
    in_edge = tuple(edge_len[:, i] > 0.0 for i in range(2))
    et = mesh.edge_tris
    bnd = et[:, 1] < 0
    mult_edge, ghost_edge, outer_edge, node_in, interior_node, circ = [], [], [], [], [], []
    for i in range(2):
        m = in_tri[i]
        minus_in = m[et[:, 0]]
        plus_in = np.where(bnd, False, m[np.maximum(et[:, 1], 0)])
        interior = minus_in & plus_in
        mult = interior | (bnd & minus_in)
        outer = (~bnd) & (minus_in ^ plus_in)
        touches_cut = is_cut[et[:, 0]] | np.where(bnd, False, is_cut[np.maximum(et[:, 1], 0)])
        ghost = in_edge[i] & interior & touches_cut
        nin = np.zeros(mesh.n_nodes, bool)
        nin[mesh.triangles[m].ravel()] = True
        # a node is interior when all its triangles are in T_h^i and it is off the boundary
        count_in = np.bincount(mesh.triangles[m].ravel(), minlength=mesh.n_nodes)
        count_all = np.bincount(mesh.triangles.ravel(), minlength=mesh.n_nodes)
        full = nin & (count_in == count_all)
        inter = full & ~mesh.boundary_node
        circ.append(full)
        mult_edge.append(mult)
        ghost_edge.append(ghost)
        outer_edge.append(outer)
        node_in.append(nin)
        interior_node.append(inter)

    return CutTopology(mesh, interface, node_phase, tri_phase, cells, cut_tris, edge_len,
                       edge_seg, cut_edge, in_tri, in_edge, tuple(mult_edge),
                       tuple(ghost_edge), tuple(outer_edge), tuple(node_in),
                       tuple(interior_node), tuple(circ), piece_area)


def clip_triangle(xy, interface, tol=None):
    """Clip one triangle ``xy`` (3, 2), CCW, by the interface."""
    xy = np.asarray(xy, float)
    diam = float(np.max([np.hypot(*(xy[a] - xy[b])) for a, b in LOCAL_EDGES]))
    tol = REL_TOL * diam if tol is None else tol
    extend = 0.0 if interface.closed else 4.0 * max(diam, np.ptp(interface.vertices, axis=0).max())
    side = interface.signed_side(xy, extend)
    if np.any(np.abs(side) < tol):
        raise DegenerateCut("interface passes through a triangle vertex")
    phase = (side > 0).astype(np.int64)
    segs = interface.segments(extend)
    cross = []
    for a, b in LOCAL_EDGES:
        s, count = _edge_crossings(xy[a][None], xy[b][None], segs, tol / diam)
        if count[0] > 1:
            raise UnsupportedGeometry("interface crosses a triangle edge more than once")
        if (phase[a] != phase[b]) != (count[0] == 1):
            raise UnsupportedGeometry("edge crossing inconsistent with vertex sides")
        cross.append(xy[a] + s[0] * (xy[b] - xy[a]) if count[0] == 1 else None)
    if all(c is None for c in cross):
        raise UnsupportedGeometry("triangle is not cut by the interface")
    return _build_cut_cell(-1, xy, phase, cross)


def phase_points(topo, phase, degree=4):
    """Quadrature on every piece T cap Omega^i of phase ``phase``.

    Returns ``(tri, pts, w)``: owning triangle per point, points (Q, 2) and
    weights (Q,). Cached on the topology.
    """
    key = ("phase_points", phase, degree)
    if key in topo._cache:
        return topo._cache[key]
    mesh = topo.mesh
    unc = np.flatnonzero(topo.tri_phase == phase)
    pts, w = triangles_points(mesh.tri_coords(unc), degree)
    tri = [np.repeat(unc, pts.shape[1])]
    allp = [pts.reshape(-1, 2)]
    allw = [w.ravel()]
    for t in topo.cut_tris:
        p, wq = polygon_points(topo.cells[int(t)].polys[phase], degree)
        tri.append(np.full(wq.size, t))
        allp.append(p)
        allw.append(wq)
    out = (np.concatenate(tri), np.concatenate(allp), np.concatenate(allw))
    topo._cache[key] = out
    return out


def gamma_points(topo, degree=4):
    """Quadrature on the interface pieces: ``(tri, pts, w)`` as in phase_points."""
    key = ("gamma_points", degree)
    if key in topo._cache:
        return topo._cache[key]
    tri, allp, allw = [np.zeros(0, np.int64)], [np.zeros((0, 2))], [np.zeros(0)]
    for t in topo.cut_tris:
        g = topo.cells[int(t)].gamma
        p, wq = segment_points(g[0], g[1], degree)
        tri.append(np.full(wq.size, t))
        allp.append(p)
        allw.append(wq)
    out = (np.concatenate(tri), np.concatenate(allp), np.concatenate(allw))
    topo._cache[key] = out
    return out


def barycentric(mesh, tri, pts):
    """P1 shape values (Q, 3) of triangles ``tri`` at points ``pts``."""
    g = mesh.grads[tri]
    xy = mesh.nodes[mesh.triangles[tri]]
    # lambda_a vanishes at the next vertex, so lambda_a(x) = grad_a . (x - x_{a+1})
    nxt = xy[:, [1, 2, 0]]
    return np.einsum("qad,qad->qa", g, pts[:, None, :] - nxt)
