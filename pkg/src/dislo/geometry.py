"""Polygonal domains and the planar geometry helpers used throughout."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "Domain",
    "polygon_area",
    "points_in_polygon",
    "segment_distance",
]


def polygon_area(vertices: np.ndarray) -> float:
    """Signed area (positive for counter-clockwise vertex order)."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def points_in_polygon(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test (open polygon; boundary points undefined).

    Parameters
    ----------
    points : (P, 2) array
    vertices : (V, 2) array
        Closed polygon, last vertex not repeated.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = np.asarray(vertices, dtype=float)
    b = np.roll(a, -1, axis=0)
    inside = np.zeros(len(pts), dtype=bool)
    px, py = pts[:, 0], pts[:, 1]
    for (x0, y0), (x1, y1) in zip(a, b):
        if y0 == y1:
            continue
        crosses = (y0 > py) != (y1 > py)
        if not crosses.any():
            continue
        xi = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (px < xi)
    return inside


def _brute_segment_distance(pts, a, d, dd, chunk):
    out = np.empty(len(pts))
    step = max(1, chunk // max(1, len(a)))
    for s in range(0, len(pts), step):
        p = pts[s:s + step, None, :]
        w = p - a[None]
        t = np.clip(np.einsum("psj,sj->ps", w, d) / dd, 0.0, 1.0)
        q = w - t[..., None] * d[None]
        out[s:s + step] = np.sqrt(np.min(np.einsum("psj,psj->ps", q, q), axis=1))
    return out


def segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray,
                     chunk: int = 4_000_000) -> np.ndarray:
    """Euclidean distance from each point to the union of segments [a_s, b_s].

    Large inputs go through a k-d tree of points sampled along the
    segments: candidate segments come from the nearest samples, and the
    result is accepted only when no farther sample could belong to a closer
    segment; remaining points are treated by brute force.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    d = b - a
    dd = np.einsum("ij,ij->i", d, d)
    dd = np.where(dd > 0, dd, 1.0)
    if len(pts) * len(a) <= 200_000:
        return _brute_segment_distance(pts, a, d, dd, chunk)
    L = np.sqrt(dd)
    spacing = L.sum() / (4 * len(a))
    n = np.maximum(1, np.ceil(L / spacing).astype(np.int64))
    owner = np.repeat(np.arange(len(a)), n)
    frac = (np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n) + 0.5) / np.repeat(n, n)
    samples = a[owner] + frac[:, None] * d[owner]
    # every point of segment s lies within h_s of one of its samples
    half = (L / n)[owner] / 2
    tree = cKDTree(samples)
    hmax = half.max()
    out = np.empty(len(pts))
    todo = np.arange(len(pts))
    k = 8
    while len(todo) and k < len(samples):
        dist, idx = tree.query(pts[todo], k=k)
        seg = owner[idx]
        w = pts[todo, None, :] - a[seg]
        t = np.clip(np.einsum("pkj,pkj->pk", w, d[seg]) / dd[seg], 0.0, 1.0)
        q = w - t[..., None] * d[seg]
        best = np.sqrt(np.einsum("pkj,pkj->pk", q, q).min(axis=1))
        ok = dist[:, -1] - hmax >= best
        out[todo[ok]] = best[ok]
        todo = todo[~ok]
        k *= 4
    if len(todo):
        out[todo] = _brute_segment_distance(pts[todo], a, d, dd, chunk)
    return out


def _segments_cross(p1, p2, q1, q2) -> bool:
    """Proper or touching intersection of two closed segments."""
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_seg(a, b, c):
        return (min(a[0], b[0]) - 1e-15 <= c[0] <= max(a[0], b[0]) + 1e-15
                and min(a[1], b[1]) - 1e-15 <= c[1] <= max(a[1], b[1]) + 1e-15)

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if (o1 > 0) != (o2 > 0) and (o3 > 0) != (o4 > 0) and o1 and o2 and o3 and o4:
        return True
    return ((o1 == 0 and on_seg(p1, p2, q1)) or (o2 == 0 and on_seg(p1, p2, q2))
            or (o3 == 0 and on_seg(q1, q2, p1)) or (o4 == 0 and on_seg(q1, q2, p2)))


def _is_simple(v: np.ndarray) -> bool:
    n = len(v)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                return False
    return True


def _as_ring(vertices: Iterable[Sequence[float]], ccw: bool) -> tuple:
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise ValueError("a polygon needs at least three 2D vertices")
    if np.allclose(v[0], v[-1]):
        v = v[:-1]
    area = polygon_area(v)
    if abs(area) <= 1e-14 * max(1.0, float(np.ptp(v)) ** 2):
        raise ValueError("polygon has zero area")
    if (area > 0) != ccw:
        v = v[::-1]
    return tuple((float(x), float(y)) for x, y in v)


@dataclass(frozen=True)
class Domain:
    """A bounded polygonal domain, optionally with polygonal holes.

    The outer boundary is stored counter-clockwise and holes clockwise, so
    that the interior always lies to the left of every boundary segment.
    Instances are immutable and hashable, which lets solvers be cached per
    domain.

    Parameters
    ----------
    boundary : sequence of (x, y)
        Vertices of the outer polygon (either orientation on input).
    holes : sequence of polygons, optional
        Disjoint polygons strictly inside the outer one.
    check : bool
        Verify that each ring is a simple polygon (quadratic cost).
    """

    boundary: tuple
    holes: tuple = field(default=())

    def __init__(self, boundary, holes=(), check: bool = True):
        outer = _as_ring(boundary, ccw=True)
        inner = tuple(_as_ring(h, ccw=False) for h in holes)
        object.__setattr__(self, "boundary", outer)
        object.__setattr__(self, "holes", inner)
        if check:
            for ring in (outer,) + inner:
                if len(ring) <= 400 and not _is_simple(np.asarray(ring)):
                    raise ValueError("polygon boundary self-intersects")
            for h in inner:
                if not np.all(points_in_polygon(np.asarray(h), np.asarray(outer))):
                    raise ValueError("hole is not inside the outer boundary")

    # constructors -------------------------------------------------------
    @classmethod
    def rectangle(cls, x0: float, y0: float, x1: float, y1: float) -> "Domain":
        return cls([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])

    @classmethod
    def unit_square(cls) -> "Domain":
        return cls.rectangle(0.0, 0.0, 1.0, 1.0)

    @classmethod
    def box(cls, half_width: float, center=(0.0, 0.0)) -> "Domain":
        cx, cy = center
        return cls.rectangle(cx - half_width, cy - half_width,
                             cx + half_width, cy + half_width)

    @classmethod
    def regular_polygon(cls, n: int, radius: float = 1.0, center=(0.0, 0.0),
                        phase: float = 0.0) -> "Domain":
        """Inscribed regular n-gon, the usual stand-in for a disk."""
        return cls(regular_polygon_vertices(n, radius, center, phase), check=False)

    @classmethod
    def from_json(cls, data: dict | list) -> "Domain":
        if isinstance(data, dict):
            return cls(data["boundary"], data.get("holes", ()))
        return cls(data)

    def to_json(self) -> dict:
        out = {"boundary": [list(p) for p in self.boundary]}
        if self.holes:
            out["holes"] = [[list(p) for p in h] for h in self.holes]
        return out

    # derived geometry ---------------------------------------------------
    @cached_property
    def rings(self) -> list[np.ndarray]:
        return [np.asarray(self.boundary)] + [np.asarray(h) for h in self.holes]

    @cached_property
    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Start and end points of every boundary segment, interior on the left."""
        a = np.concatenate(self.rings)
        b = np.concatenate([np.roll(r, -1, axis=0) for r in self.rings])
        return a, b

    @property
    def area(self) -> float:
        return sum(polygon_area(r) for r in self.rings)

    @property
    def perimeter(self) -> float:
        a, b = self.segments
        return float(np.linalg.norm(b - a, axis=1).sum())

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        v = np.asarray(self.boundary)
        return (float(v[:, 0].min()), float(v[:, 1].min()),
                float(v[:, 0].max()), float(v[:, 1].max()))

    @property
    def diameter(self) -> float:
        v = np.asarray(self.boundary)
        diff = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())

    @cached_property
    def is_convex(self) -> bool:
        if self.holes:
            return False
        v = np.asarray(self.boundary)
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
        return bool(np.all(cross >= -1e-14 * np.abs(e).max() ** 2))

    def boundary_distance(self, points) -> np.ndarray:
        """Euclidean distance to the boundary (outer ring and holes)."""
        a, b = self.segments
        return segment_distance(points, a, b)

    @cached_property
    def _sample_tree(self):
        a, b = self.segments
        d = b - a
        L = np.linalg.norm(d, axis=1)
        n = np.maximum(1, np.ceil(L / (L.sum() / (4 * len(a)))).astype(np.int64))
        owner = np.repeat(np.arange(len(a)), n)
        frac = (np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n) + 0.5) / np.repeat(n, n)
        return cKDTree(a[owner] + frac[:, None] * d[owner]), float((L / n).max() / 2)

    def near_boundary(self, points, atol: float) -> np.ndarray:
        """Whether each point is within ``atol`` of the boundary."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tree, half = self._sample_tree
        ds, _ = tree.query(pts, distance_upper_bound=atol + half + 1e-300)
        cand = np.isfinite(ds)
        out = np.zeros(len(pts), dtype=bool)
        if cand.any():
            out[cand] = self.boundary_distance(pts[cand]) <= atol
        return out

    def contains(self, points, closed: bool = True, tol: float = 1e-12) -> np.ndarray:
        """Membership in the open domain, or its closure when ``closed``.

        ``tol`` is a relative tolerance (times the diameter) on the boundary
        distance used to decide points lying on the boundary.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = points_in_polygon(pts, self.rings[0])
        for h in self.rings[1:]:
            inside &= ~points_in_polygon(pts, h)
        atol = tol * max(1.0, self.diameter)
        near = self.near_boundary(pts, atol)
        if closed:
            return inside | near
        return inside & ~near

    def transformed(self, A: np.ndarray, shift=(0.0, 0.0)) -> "Domain":
        """Image of the domain under ``x -> A x + shift``."""
        A = np.asarray(A, dtype=float)
        s = np.asarray(shift, dtype=float)
        outer = np.asarray(self.boundary) @ A.T + s
        holes = [np.asarray(h) @ A.T + s for h in self.holes]
        return Domain(outer, holes, check=False)

    def with_holes(self, holes) -> "Domain":
        return Domain(self.boundary, tuple(self.holes) + tuple(holes), check=False)


def regular_polygon_vertices(n: int, radius: float = 1.0, center=(0.0, 0.0),
                             phase: float = 0.0) -> np.ndarray:
    t = phase + 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + radius * np.cos(t),
                            center[1] + radius * np.sin(t)])
