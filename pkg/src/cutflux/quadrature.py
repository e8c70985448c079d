"""Quadrature on triangles, convex polygons and segments."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument

MAX_DEGREE = 4


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def integrate(self, func):
        vals = np.asarray(func(self.points[:, 0], self.points[:, 1]), dtype=float)
        return float(np.dot(self.weights, vals))


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Barycentric points (q, 3) and weights (q,) summing to one."""
    if degree < 0 or degree > MAX_DEGREE:
        raise InvalidArgument(f"unsupported quadrature degree {degree}")
    if degree <= 1:
        bary = np.array([[1.0, 1.0, 1.0]]) / 3.0
        w = np.array([1.0])
    elif degree == 2:
        bary = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        w = np.full(3, 1 / 3)
    else:
        # Dunavant, 6 points, exact to degree 4
        a1, w1 = 0.445948490915965, 0.223381589678011
        a2, w2 = 0.091576213509771, 0.109951743655322
        b1 = 1.0 - 2.0 * a1
        b2 = 1.0 - 2.0 * a2
        bary = np.array([[b1, a1, a1], [a1, b1, a1], [a1, a1, b1],
                         [b2, a2, a2], [a2, b2, a2], [a2, a2, b2]])
        w = np.array([w1, w1, w1, w2, w2, w2])
        w = w / w.sum()
    return bary, w


@lru_cache(maxsize=None)
def segment_rule(degree):
    """Points in [0, 1] and weights summing to one."""
    if degree < 0 or degree > MAX_DEGREE:
        raise InvalidArgument(f"unsupported quadrature degree {degree}")
    n = max(1, (degree + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def triangles_points(xy, degree):
    """Batched rule on (T, 3, 2) triangles -> points (T, q, 2), weights (T, q)."""
    bary, w = triangle_rule(degree)
    pts = np.einsum("qj,tjd->tqd", bary, xy)
    e1 = xy[:, 1] - xy[:, 0]
    e2 = xy[:, 2] - xy[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    return pts, area[:, None] * w[None, :]


def polygon_area(poly):
    x = poly[:, 0]
    y = poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def fan_triangles(poly):
    """Triangles (n, 3, 2) of a convex polygon fanned from its vertex centroid."""
    poly = np.asarray(poly, float)
    if poly.shape[0] == 3:
        return poly[None]
    c = poly.mean(axis=0)
    nxt = np.roll(poly, -1, axis=0)
    return np.stack([np.broadcast_to(c, poly.shape), poly, nxt], axis=1)


def polygon_points(poly, degree):
    pts, w = triangles_points(fan_triangles(poly), degree)
    return pts.reshape(-1, 2), w.ravel()


def segment_points(a, b, degree):
    s, w = segment_rule(degree)
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    pts = a[None, :] + s[:, None] * (b - a)[None, :]
    return pts, w * float(np.hypot(*(b - a)))


def quadrature(region, degree):
    """Rule exact to ``degree`` on a segment (2 points), triangle or convex polygon."""
    if not 0 <= degree <= MAX_DEGREE:
        raise InvalidArgument(f"unsupported quadrature degree {degree}")
    region = np.asarray(region, float)
    if region.ndim != 2 or region.shape[1] != 2 or region.shape[0] < 2:
        raise InvalidArgument("region must be an (n, 2) vertex array with n >= 2")
    if region.shape[0] == 2:
        pts, w = segment_points(region[0], region[1], degree)
    else:
        pts, w = polygon_points(region, degree)
    return QuadratureRule(pts, w, degree)


def subdivide(xy, levels):
    """Uniformly refine (T, 3, 2) triangles ``levels`` times (4**levels children each)."""
    for _ in range(levels):
        a, b, c = xy[:, 0], xy[:, 1], xy[:, 2]
        ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
        xy = np.concatenate([np.stack(t, axis=1) for t in
                             ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))])
    return xy
