"""Convex-polygon helpers: validation, conservative disc dilation, point/segment tests.

Polygons are (K, 2) arrays of counterclockwise vertices. All tests treat the
polygon as a closed set, so touching the boundary counts as a hit.
"""

from __future__ import annotations

import math

import numpy as np


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def as_convex_polygon(vertices) -> np.ndarray:
    """Validate a convex simple polygon and return it counterclockwise."""
    poly = np.asarray(vertices, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
        raise ValueError("a polygon needs at least 3 vertices of 2 coordinates")
    if not np.all(np.isfinite(poly)):
        raise ValueError("polygon vertices must be finite")
    area = signed_area(poly)
    if area == 0:
        raise ValueError("degenerate polygon")
    if area < 0:
        poly = poly[::-1].copy()
    e = np.roll(poly, -1, axis=0) - poly
    turns = _cross(e, np.roll(e, -1, axis=0))
    if np.any(turns < 0):
        raise ValueError("polygon is not convex")
    # total turning of 2*pi rules out self-intersecting star shapes
    ang = np.arctan2(turns, np.sum(e * np.roll(e, -1, axis=0), axis=1))
    if not math.isclose(float(ang.sum()), 2 * math.pi, abs_tol=1e-6):
        raise ValueError("polygon is not simple")
    return poly


def outward_normals(poly: np.ndarray) -> np.ndarray:
    e = np.roll(poly, -1, axis=0) - poly
    n = np.stack([e[:, 1], -e[:, 0]], axis=1)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def inflate_polygon(poly: np.ndarray, radius: float, max_arc: float = 2 * math.pi / 64) -> np.ndarray:
    """Outer polygonal approximation of poly (+) disc(radius).

    Each vertex arc is replaced by tangent segments, so the result contains
    the exact Minkowski sum and overshoots it by less than a factor
    1/cos(max_arc/2) in the rounded corners.
    """
    if radius <= 0:
        return poly.copy()
    n = outward_normals(poly)
    out = []
    K = len(poly)
    for i in range(K):
        a0 = math.atan2(n[i - 1, 1], n[i - 1, 0])
        a1 = math.atan2(n[i, 1], n[i, 0])
        alpha = (a1 - a0) % (2 * math.pi)
        k = max(1, math.ceil(alpha / max_arc - 1e-12))
        step = alpha / k
        reach = radius / math.cos(step / 2)
        for j in range(k):
            a = a0 + (j + 0.5) * step
            out.append(poly[i] + reach * np.array([math.cos(a), math.sin(a)]))
    return np.array(out)


def minkowski_disc_area(poly: np.ndarray, radius: float) -> float:
    """Exact area of poly (+) disc(radius): A + P r + pi r^2."""
    perim = float(np.sum(np.linalg.norm(np.roll(poly, -1, axis=0) - poly, axis=1)))
    return abs(signed_area(poly)) + perim * radius + math.pi * radius**2


def points_in_polygon(points, poly: np.ndarray) -> np.ndarray:
    """Closed containment test for a batch of points (..., 2)."""
    p = np.asarray(points, dtype=float)
    e = np.roll(poly, -1, axis=0) - poly
    rel = p[..., None, :] - poly
    return np.all(_cross(e, rel) >= 0.0, axis=-1)


def segments_hit_polygon(a, b, poly: np.ndarray, normals=None, pmin=None, pmax=None) -> np.ndarray:
    """Separating-axis test: does closed segment [a, b] meet the closed polygon?

    ``a`` and ``b`` are (S, 2); returns a boolean array of shape (S,).
    ``normals`` and the polygon's projections on them may be passed in
    precomputed.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if normals is None:
        normals = outward_normals(poly)
        pv = poly @ normals.T  # (K_vertices, K_axes)
        pmin, pmax = pv.min(axis=0), pv.max(axis=0)
    pa, pb = a @ normals.T, b @ normals.T  # (S, K)
    smin, smax = np.minimum(pa, pb), np.maximum(pa, pb)
    overlap = np.all((smin <= pmax) & (smax >= pmin), axis=1)
    d = b - a
    sn = np.stack([-d[:, 1], d[:, 0]], axis=1)
    proj = sn @ poly.T  # (S, K)
    s0 = np.sum(sn * a, axis=1)
    return overlap & (proj.min(axis=1) <= s0) & (proj.max(axis=1) >= s0)


def _point_segment_distance(p, a, b):
    d = b - a
    dd = np.sum(d * d, axis=-1)
    t = np.where(dd > 0, np.sum((p - a) * d, axis=-1) / np.where(dd > 0, dd, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * d), axis=-1)


def distance_to_polygon(points, poly: np.ndarray) -> np.ndarray:
    """Euclidean distance from points (..., 2) to the closed polygon (0 inside)."""
    p = np.asarray(points, dtype=float)
    a = poly
    b = np.roll(poly, -1, axis=0)
    dist = _point_segment_distance(p[..., None, :], a, b).min(axis=-1)
    return np.where(points_in_polygon(p, poly), 0.0, dist)


def segment_distance_to_polygon(a, b, poly: np.ndarray) -> np.ndarray:
    """Distance from each closed segment [a_i, b_i] to the closed polygon."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    va = poly
    vb = np.roll(poly, -1, axis=0)
    # for non-intersecting segment pairs the distance is attained at an endpoint
    d1 = _point_segment_distance(a[:, None, :], va, vb).min(axis=1)
    d2 = _point_segment_distance(b[:, None, :], va, vb).min(axis=1)
    d3 = _point_segment_distance(va[None, :, :], a[:, None, :], b[:, None, :]).min(axis=1)
    dist = np.minimum(np.minimum(d1, d2), d3)
    return np.where(segments_hit_polygon(a, b, poly), 0.0, dist)
