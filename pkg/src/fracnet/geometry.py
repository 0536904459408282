"""Planar polygon geometry in 3D: disc polygons, clipping, plane intersections.

Fractures are represented as convex planar polygons (regular n-gons inscribed
in the parent disc). Everything here is pure numpy on (m, 3) vertex arrays.
"""

from __future__ import annotations

import numpy as np

# Below this, segment endpoints / polygon areas are treated as degenerate.
POINT_TOL = 1e-9
AREA_TOL = 1e-12


def unit(v: np.ndarray) -> np.ndarray:
    """Normalize a vector; raises on zero length."""
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize zero vector")
    return v / n


def plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two orthonormal in-plane vectors (u, w) for a given unit normal."""
    # pick the axis least aligned with the normal to avoid degeneracy
    a = np.zeros(3)
    a[np.argmin(np.abs(normal))] = 1.0
    u = unit(np.cross(normal, a))
    w = np.cross(normal, u)
    return u, w


def disc_polygon(center: np.ndarray, normal: np.ndarray, radius: float,
                 n_vertices: int = 16) -> np.ndarray:
    """Regular n-gon inscribed in the disc (center, normal, radius).

    Returns an (n_vertices, 3) array. Vertex order follows the right-hand
    rule about the normal; the starting angle is fixed by plane_basis so the
    polygon is a deterministic function of its inputs.
    """
    u, w = plane_basis(unit(normal))
    theta = 2.0 * np.pi * np.arange(n_vertices) / n_vertices
    return (center[None, :]
            + radius * np.cos(theta)[:, None] * u[None, :]
            + radius * np.sin(theta)[:, None] * w[None, :])


def polygon_area(vertices: np.ndarray) -> float:
    """Area of a planar polygon embedded in 3D (shoelace via cross products)."""
    if len(vertices) < 3:
        return 0.0
    v0 = vertices[0]
    cross = np.cross(vertices[1:-1] - v0, vertices[2:] - v0)
    return 0.5 * np.linalg.norm(cross.sum(axis=0))


def polygon_centroid(vertices: np.ndarray) -> np.ndarray:
    """Area-weighted centroid of a convex planar polygon in 3D."""
    if len(vertices) < 3:
        return vertices.mean(axis=0)
    v0 = vertices[0]
    total = np.zeros(3)
    area2 = 0.0
    for i in range(1, len(vertices) - 1):
        c = np.cross(vertices[i] - v0, vertices[i + 1] - v0)
        a2 = np.linalg.norm(c)
        total += a2 * (v0 + vertices[i] + vertices[i + 1]) / 3.0
        area2 += a2
    if area2 == 0.0:
        return vertices.mean(axis=0)
    return total / area2


def clip_polygon_halfspace(vertices: np.ndarray, axis: int, value: float,
                           keep_below: bool) -> np.ndarray:
    """Sutherland-Hodgman clip against an axis-aligned half-space.

    keep_below=True keeps points with coordinate <= value.
    """
    if len(vertices) == 0:
        return vertices
    sign = 1.0 if keep_below else -1.0
    d = sign * (value - vertices[:, axis])  # >= 0 means inside
    out: list[np.ndarray] = []
    m = len(vertices)
    for j in range(m):
        i = (j - 1) % m
        di, dj = d[i], d[j]
        if di * dj < 0.0:
            t = di / (di - dj)
            out.append(vertices[i] + t * (vertices[j] - vertices[i]))
        if dj >= 0.0:
            out.append(vertices[j])
    if not out:
        return np.empty((0, 3))
    return np.asarray(out)


def clip_polygon_box(vertices: np.ndarray, lo: np.ndarray,
                     hi: np.ndarray) -> np.ndarray:
    """Clip a convex polygon to the axis-aligned box [lo, hi]^3."""
    poly = vertices
    for axis in range(3):
        poly = clip_polygon_halfspace(poly, axis, float(lo[axis]), keep_below=False)
        if len(poly) == 0:
            return poly
        poly = clip_polygon_halfspace(poly, axis, float(hi[axis]), keep_below=True)
        if len(poly) == 0:
            return poly
    return _drop_duplicate_vertices(poly)


def _drop_duplicate_vertices(poly: np.ndarray, tol: float = POINT_TOL) -> np.ndarray:
    if len(poly) < 2:
        return poly
    keep = [0]
    for i in range(1, len(poly)):
        if np.linalg.norm(poly[i] - poly[keep[-1]]) > tol:
            keep.append(i)
    if len(keep) > 1 and np.linalg.norm(poly[keep[-1]] - poly[keep[0]]) <= tol:
        keep.pop()
    return poly[keep]


def line_polygon_interval(point: np.ndarray, direction: np.ndarray,
                          vertices: np.ndarray, normal: np.ndarray,
                          tol: float = POINT_TOL) -> tuple[float, float] | None:
    """Parameter interval [t0, t1] of line point + t*direction inside a convex
    planar polygon, assuming the line lies in the polygon's plane.

    Returns None when the chord is empty or degenerate (length <= tol).
    """
    # Half-plane test per edge: inside means the point is on the polygon side
    # of every edge (edges oriented consistently with `normal`).
    t_lo, t_hi = -np.inf, np.inf
    m = len(vertices)
    for i in range(m):
        a = vertices[i]
        b = vertices[(i + 1) % m]
        edge_in = np.cross(normal, b - a)  # points toward polygon interior
        num = np.dot(edge_in, a - point)
        den = np.dot(edge_in, direction)
        if abs(den) < 1e-15:
            if num > tol:  # line entirely outside this edge's half-plane
                return None
            continue
        t = num / den
        if den > 0:
            t_lo = max(t_lo, t)
        else:
            t_hi = min(t_hi, t)
    if not np.isfinite(t_lo) or not np.isfinite(t_hi) or t_hi - t_lo <= tol:
        return None
    return t_lo, t_hi


def convex_polygon_intersection_segment(
        verts_a: np.ndarray, normal_a: np.ndarray,
        verts_b: np.ndarray, normal_b: np.ndarray,
        tol: float = POINT_TOL) -> tuple[np.ndarray, np.ndarray] | None:
    """Segment where two convex planar polygons in 3D meet, or None.

    Parallel/coplanar planes return None (coplanar overlap is a measure-zero
    event under continuous orientation sampling and is treated as
    non-intersecting). Point contacts (chord shorter than tol) return None.
    """
    direction = np.cross(normal_a, normal_b)
    norm_d = np.linalg.norm(direction)
    if norm_d < 1e-12:
        return None
    direction = direction / norm_d
    # A point on the intersection line of the two planes: solve
    #   n_a . p = n_a . a0,  n_b . p = n_b . b0  with p ⟂ direction.
    da = np.dot(normal_a, verts_a[0])
    db = np.dot(normal_b, verts_b[0])
    mat = np.array([normal_a, normal_b, direction])
    point = np.linalg.solve(mat, np.array([da, db, 0.0]))
    ia = line_polygon_interval(point, direction, verts_a, normal_a, tol)
    if ia is None:
        return None
    ib = line_polygon_interval(point, direction, verts_b, normal_b, tol)
    if ib is None:
        return None
    t0 = max(ia[0], ib[0])
    t1 = min(ia[1], ib[1])
    if t1 - t0 <= tol:
        return None
    return point + t0 * direction, point + t1 * direction


def point_in_convex_polygon(p: np.ndarray, vertices: np.ndarray,
                            normal: np.ndarray, tol: float = POINT_TOL) -> bool:
    """True when p lies inside (or within tol of) a convex planar polygon."""
    m = len(vertices)
    for i in range(m):
        a = vertices[i]
        b = vertices[(i + 1) % m]
        edge_in = np.cross(normal, b - a)
        if np.dot(edge_in, p - a) < -tol * max(1.0, np.linalg.norm(edge_in)):
            return False
    return True
