"""Conforming triangular meshes with globally oriented edges."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import InvalidArgument

# local edge j of a triangle joins local vertices j and j+1
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


@dataclass(frozen=True)
class NodePatch:
    node: int
    triangles: np.ndarray
    edges: np.ndarray
    interior: bool


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation.

    ``edge_tris[F] = (T_F^-, T_F^+)`` with ``-1`` for the missing neighbour of a
    boundary edge; ``normals[F]`` points from ``T_F^-`` into ``T_F^+`` (outward
    for boundary edges). ``tri_edge_sign[T, j]`` is +1 when ``T`` is ``T_F^-`` of
    its local edge ``j``, which is also the jump of the indicator of ``T`` across
    that edge.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_tris: np.ndarray
    tri_edges: np.ndarray
    tri_edge_sign: np.ndarray
    normals: np.ndarray
    h_edge: np.ndarray
    h_tri: np.ndarray
    area: np.ndarray
    grads: np.ndarray
    boundary_node: np.ndarray
    _node_tris: tuple = field(repr=False)
    _node_edges: tuple = field(repr=False)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def n_edges(self):
        return self.edges.shape[0]

    @property
    def boundary_edge(self):
        return self.edge_tris[:, 1] < 0

    @property
    def diameter(self):
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        return float(np.hypot(*(hi - lo)))

    def tri_coords(self, t=None):
        if t is None:
            return self.nodes[self.triangles]
        return self.nodes[self.triangles[t]]

    def centroids(self):
        return self.nodes[self.triangles].mean(axis=1)

    def node_triangles(self, n):
        ptr, idx = self._node_tris
        return idx[ptr[n]:ptr[n + 1]]

    def node_edges(self, n):
        ptr, idx = self._node_edges
        return idx[ptr[n]:ptr[n + 1]]

    def edge_midpoints(self):
        return self.nodes[self.edges].mean(axis=1)

    def local_edge_index(self, t, f):
        hit = np.flatnonzero(self.tri_edges[t] == f)
        if hit.size != 1:
            raise InvalidArgument(f"edge {f} is not an edge of triangle {t}")
        return int(hit[0])

    def shape_ratio(self):
        """h_T / rho_T with rho_T the inradius."""
        a = self.h_edge[self.tri_edges]
        s = 0.5 * a.sum(axis=1)
        rho = self.area / s
        return self.h_tri / rho


def _csr_groups(keys, values, n):
    order = np.argsort(keys, kind="stable")
    counts = np.bincount(keys, minlength=n)
    ptr = np.zeros(n + 1, np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr, values[order]


def mesh_from_arrays(nodes, triangles):
    """Build the edge structure of a triangulation given nodes and CCW triangles."""
    nodes = np.ascontiguousarray(nodes, dtype=float)
    tris = np.ascontiguousarray(triangles, dtype=np.int64)
    if nodes.ndim != 2 or nodes.shape[1] != 2 or tris.ndim != 2 or tris.shape[1] != 3:
        raise InvalidArgument("nodes must be (V, 2) and triangles (T, 3)")
    if tris.size and (tris.min() < 0 or tris.max() >= nodes.shape[0]):
        raise InvalidArgument("triangle references an unknown node")
    grads, area = _kernels.p1_gradients(nodes[tris])
    if np.any(area <= 0.0):
        bad = int(np.flatnonzero(area <= 0.0)[0])
        raise InvalidArgument(f"triangle {bad} is degenerate or not counter-clockwise")

    ntri = tris.shape[0]
    half = np.stack([tris[:, [a, b]] for a, b in LOCAL_EDGES], axis=1).reshape(-1, 2)
    key = np.sort(half, axis=1)
    uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    if np.any(counts > 2):
        raise InvalidArgument("non-manifold edge shared by more than two triangles")
    nedge = uniq.shape[0]
    tri_of_half = np.repeat(np.arange(ntri), 3)

    # the first half-edge (lowest triangle id) fixes T_F^- and the edge direction
    order = np.lexsort((tri_of_half, inv))
    first = np.ones(order.size, bool)
    first[1:] = inv[order][1:] != inv[order][:-1]
    minus_half = order[first]
    edges = half[minus_half].copy()
    edge_tris = -np.ones((nedge, 2), np.int64)
    edge_tris[:, 0] = tri_of_half[minus_half]
    second = order[~first]
    edge_tris[inv[second], 1] = tri_of_half[second]

    tri_edges = inv.reshape(ntri, 3)
    tri_edge_sign = np.where(edge_tris[tri_edges, 0] == np.arange(ntri)[:, None], 1, -1)

    d = nodes[edges[:, 1]] - nodes[edges[:, 0]]
    h_edge = np.hypot(d[:, 0], d[:, 1])
    # clockwise rotation of a CCW edge direction is the outward normal of T_F^-
    normals = np.stack([d[:, 1], -d[:, 0]], axis=1) / h_edge[:, None]
    h_tri = h_edge[tri_edges].max(axis=1)

    bnd_edges = np.flatnonzero(edge_tris[:, 1] < 0)
    boundary_node = np.zeros(nodes.shape[0], bool)
    boundary_node[edges[bnd_edges].ravel()] = True

    node_tris = _csr_groups(tris.ravel(), np.repeat(np.arange(ntri), 3), nodes.shape[0])
    node_edges = _csr_groups(edges.ravel(), np.repeat(np.arange(nedge), 2), nodes.shape[0])
    return Mesh(nodes, tris, edges, edge_tris, tri_edges, tri_edge_sign, normals, h_edge,
                h_tri, area, grads, boundary_node, node_tris, node_edges)


def build_structured_mesh(nx, ny, rect=(0.0, 1.0, 0.0, 1.0)):
    """Split ``rect = (x0, x1, y0, y1)`` into ``nx*ny`` cells, each cut along the
    lower-left to upper-right diagonal."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidArgument(f"cell counts must be positive integers, got {nx}x{ny}")
    x0, x1, y0, y1 = (float(v) for v in rect)
    if not (x1 > x0 and y1 > y0):
        raise InvalidArgument(f"degenerate rectangle {rect}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.stack([X.ravel(), Y.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i = i.ravel()
    j = j.ravel()
    ll = j * (nx + 1) + i
    lr = ll + 1
    ul = ll + nx + 1
    ur = ul + 1
    lower = np.stack([ll, lr, ur], axis=1)
    upper = np.stack([ll, ur, ul], axis=1)
    tris = np.empty((2 * ll.size, 3), np.int64)
    tris[0::2] = lower
    tris[1::2] = upper
    return mesh_from_arrays(nodes, tris)


def node_edge_sign(mesh, node, edge):
    """+1 when the clockwise rotation of the direction node -> other endpoint
    equals the edge normal, -1 otherwise."""
    a, b = mesh.edges[edge]
    if node == a:
        other = b
    elif node == b:
        other = a
    else:
        raise InvalidArgument(f"node {node} is not an endpoint of edge {edge}")
    t = mesh.nodes[other] - mesh.nodes[node]
    rot = np.array([t[1], -t[0]])
    return 1 if rot @ mesh.normals[edge] > 0 else -1


def edge_signs(mesh):
    """(E, 2) array of node_edge_sign at both endpoints, vectorised."""
    d = mesh.nodes[mesh.edges[:, 1]] - mesh.nodes[mesh.edges[:, 0]]
    rot = np.stack([d[:, 1], -d[:, 0]], axis=1)
    s0 = np.where(np.einsum("ij,ij->i", rot, mesh.normals) > 0, 1, -1)
    return np.stack([s0, -s0], axis=1)


def node_patch(mesh, node):
    if not 0 <= node < mesh.n_nodes:
        raise InvalidArgument(f"node {node} out of range")
    return NodePatch(int(node), mesh.node_triangles(node).copy(), mesh.node_edges(node).copy(),
                     not bool(mesh.boundary_node[node]))


def read_mesh(path):
    """Read the plain-text ``nodes <V>`` / ``triangles <F>`` format."""
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        if lines[0][0] != "nodes":
            raise InvalidArgument("mesh file must start with 'nodes <V>'")
        nv = int(lines[0][1])
        nodes = np.array([[float(v) for v in ln[:2]] for ln in lines[1:1 + nv]])
        head = lines[1 + nv]
        if head[0] != "triangles":
            raise InvalidArgument("expected 'triangles <F>' after the node block")
        nt = int(head[1])
        tris = np.array([[int(v) for v in ln[:3]] for ln in lines[2 + nv:2 + nv + nt]], np.int64)
    except (IndexError, ValueError) as exc:
        raise InvalidArgument(f"malformed mesh file {path}: {exc}") from exc
    if nodes.shape != (nv, 2) or tris.shape != (nt, 3):
        raise InvalidArgument(f"malformed mesh file {path}: counts do not match")
    return mesh_from_arrays(nodes, tris)


def write_mesh(mesh, path):
    with open(path, "w") as fh:
        fh.write(f"nodes {mesh.n_nodes}\n")
        for x, y in mesh.nodes:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        fh.write(f"triangles {mesh.n_triangles}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
