"""Lattices, their periodic Delaunay triangulation, and clipped meshes.

A lattice is given by two generators and an optional list of basis
translations (a complex lattice).  Lattice points are labelled by integer
keys ``(k, a, b)`` meaning ``t_k + a v1 + b v2``.  The periodic
triangulation stores one representative per translation class of
triangles; :func:`clip` places scaled copies of these inside a polygon.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay

from .geometry import Domain

__all__ = [
    "LatticeSpec",
    "PeriodicTriangulation",
    "ClippedMesh",
    "EmptyMeshError",
    "build_triangulation",
    "clip",
    "make_mesh",
]


class EmptyMeshError(ValueError):
    """Raised when no scaled triangle fits inside the domain."""


@dataclass(frozen=True)
class LatticeSpec:
    """Generators ``v1, v2`` and basis translations of a (complex) lattice."""

    v1: tuple[float, float]
    v2: tuple[float, float]
    translations: tuple[tuple[float, float], ...] = ((0.0, 0.0),)

    def __post_init__(self):
        v1 = tuple(float(x) for x in self.v1)
        v2 = tuple(float(x) for x in self.v2)
        tr = tuple(tuple(float(x) for x in t) for t in self.translations) or ((0.0, 0.0),)
        object.__setattr__(self, "v1", v1)
        object.__setattr__(self, "v2", v2)
        object.__setattr__(self, "translations", tr)
        det = v1[0] * v2[1] - v1[1] * v2[0]
        scale = np.hypot(*v1) * np.hypot(*v2)
        if scale == 0 or abs(det) <= 1e-12 * scale:
            raise ValueError("degenerate lattice generators (det = 0)")
        frac = np.asarray(tr) @ np.linalg.inv(self.matrix).T
        frac = frac - np.floor(frac + 1e-12)
        for i in range(len(frac)):
            for j in range(i):
                d = frac[i] - frac[j]
                if np.allclose(d - np.round(d), 0.0, atol=1e-10):
                    raise ValueError("translations coincide modulo the lattice")

    @classmethod
    def square(cls) -> "LatticeSpec":
        return cls((1.0, 0.0), (0.0, 1.0))

    @classmethod
    def triangular(cls) -> "LatticeSpec":
        return cls((1.0, 0.0), (0.5, np.sqrt(3.0) / 2.0))

    @classmethod
    def honeycomb(cls) -> "LatticeSpec":
        """Two-point basis on the triangular lattice (unit bond length sqrt(1/3))."""
        return cls((1.0, 0.0), (0.5, np.sqrt(3.0) / 2.0),
                   ((0.0, 0.0), (0.5, 0.5 / np.sqrt(3.0))))

    @property
    def matrix(self) -> np.ndarray:
        """Columns are the generators."""
        return np.array([self.v1, self.v2]).T

    @property
    def n_basis(self) -> int:
        return len(self.translations)

    def points(self, keys: np.ndarray) -> np.ndarray:
        """Coordinates of integer keys ``(k, a, b)``."""
        keys = np.asarray(keys)
        t = np.asarray(self.translations)[keys[..., 0]]
        return t + keys[..., 1:2] * np.asarray(self.v1) + keys[..., 2:3] * np.asarray(self.v2)


@dataclass(frozen=True)
class PeriodicTriangulation:
    """One representative triangle per translation class.

    ``triangles`` has shape ``(F, 3, 3)``: for each triangle three keys
    ``(k, a, b)`` in counter-clockwise order, translated so that the
    lexicographically smallest key ``(a, b, k)`` sits in cell ``(0, 0)``.
    """

    spec: LatticeSpec
    triangles: np.ndarray = field(repr=False)

    def patch(self, n: int) -> np.ndarray:
        """Keys of all triangles with anchor cell in ``[-n, n]^2``, shape (.., 3, 3)."""
        r = np.arange(-n, n + 1)
        aa, bb = np.meshgrid(r, r, indexing="ij")
        cells = np.column_stack([aa.ravel(), bb.ravel()])
        out = self.triangles[None].repeat(len(cells), axis=0).copy()
        out[..., 1] += cells[:, None, None, 0]
        out[..., 2] += cells[:, None, None, 1]
        return out.reshape(-1, 3, 3)


def _canonical(tri_keys: np.ndarray) -> tuple:
    """Translation-invariant key of a triangle given as three (k, a, b) rows."""
    order = sorted(range(3), key=lambda i: (tri_keys[i, 1], tri_keys[i, 2], tri_keys[i, 0]))
    a0, b0 = tri_keys[order[0], 1], tri_keys[order[0], 2]
    shifted = tri_keys.copy()
    shifted[:, 1] -= a0
    shifted[:, 2] -= b0
    return tuple(sorted(tuple(int(x) for x in row) for row in shifted))


def build_triangulation(spec: LatticeSpec) -> PeriodicTriangulation:
    """Periodic Delaunay triangulation of the lattice points.

    Ties between equally valid Delaunay triangulations (cocircular points,
    e.g. the square lattice) are broken by a fixed, lattice-periodic
    perturbation of the generators and basis points.  For the square
    lattice this selects the ``v1 + v2`` diagonal.  The result is
    deterministic for a fixed ``spec``.
    """
    v1 = np.asarray(spec.v1)
    v2 = np.asarray(spec.v2)
    scale = min(np.hypot(*v1), np.hypot(*v2))
    eta = 1e-7 * scale
    v1p = v1
    v2p = v2 - 1e-7 * v1
    tr = np.asarray(spec.translations)
    kk = np.arange(len(tr))
    trp = tr + eta * np.column_stack([0.61 * kk, 0.37 * kk ** 2])
    n_expected = 2 * len(tr)

    for n in (3, 5, 8, 12):
        r = np.arange(-n, n + 1)
        aa, bb, ks = np.meshgrid(r, r, kk, indexing="ij")
        keys = np.column_stack([ks.ravel(), aa.ravel(), bb.ravel()])
        pts = trp[keys[:, 0]] + keys[:, 1:2] * v1p + keys[:, 2:3] * v2p
        dt = Delaunay(pts)
        simp = dt.simplices
        P = pts[simp]
        # circumcircles must lie inside the sampled parallelogram to be trusted
        ax, ay = P[:, 0, 0], P[:, 0, 1]
        bx, by = P[:, 1, 0], P[:, 1, 1]
        cx, cy = P[:, 2, 0], P[:, 2, 1]
        d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
        ux = ((ax**2 + ay**2) * (by - cy) + (bx**2 + by**2) * (cy - ay)
              + (cx**2 + cy**2) * (ay - by)) / d
        uy = ((ax**2 + ay**2) * (cx - bx) + (bx**2 + by**2) * (ax - cx)
              + (cx**2 + cy**2) * (bx - ax)) / d
        rad = np.hypot(ax - ux, ay - uy)
        lo = -(n - 0.5)
        hi = n - 0.5
        corner = lo * v1p + lo * v2p
        M = np.array([v1p, v2p]).T
        # distance from the center to the four sides of the parallelogram
        inv = np.linalg.inv(M)
        cen = np.column_stack([ux, uy])
        ab = (cen - corner) @ inv.T
        h1 = abs(np.linalg.det(M)) / np.hypot(*v2p)
        h2 = abs(np.linalg.det(M)) / np.hypot(*v1p)
        span = hi - lo
        dist = np.minimum.reduce([ab[:, 0] * h1, (span - ab[:, 0]) * h1,
                                  ab[:, 1] * h2, (span - ab[:, 1]) * h2])
        ok = dist > rad * (1 + 1e-9)
        found = {}
        for s in simp[ok]:
            key = _canonical(keys[s])
            found.setdefault(key, None)
        if len(found) == n_expected:
            break
    else:
        raise RuntimeError("periodic triangulation did not close up")

    tris = []
    for key in sorted(found):
        t = np.asarray(key)
        p = spec.points(t)
        area = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
        if area < 0:
            t = t[[0, 2, 1]]
        tris.append(t)
    arr = np.asarray(tris, dtype=np.int64)
    arr.setflags(write=False)
    return PeriodicTriangulation(spec, arr)


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True, eq=False)
class ClippedMesh:
    """Scaled lattice triangles contained in the closure of a domain.

    Attributes
    ----------
    epsilon : float
        Lattice spacing.
    nodes : (N, 2) array
    bonds : (B, 2) int array
        Node pairs ``(i, j)`` with ``i < j``; the stored orientation of a bond
        is ``nodes[j] - nodes[i]``.
    triangles : (T, 3) int array
        Counter-clockwise node triples.
    barycenters : (T, 2) array
    keys : (N, 3) int array
        Lattice labels ``(k, a, b)`` of the nodes.
    """

    epsilon: float
    nodes: np.ndarray = field(repr=False)
    bonds: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    barycenters: np.ndarray = field(repr=False)
    keys: np.ndarray = field(repr=False)
    domain: Domain | None = field(default=None, repr=False)
    lattice: LatticeSpec | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def bond_vectors(self) -> np.ndarray:
        """Stored orientation ``nodes[j] - nodes[i]`` of each bond."""
        return self.nodes[self.bonds[:, 1]] - self.nodes[self.bonds[:, 0]]

    @cached_property
    def _incidence(self):
        t = self.triangles
        starts = t
        ends = t[:, [1, 2, 0]]
        lo = np.minimum(starts, ends)
        hi = np.maximum(starts, ends)
        n = self.n_nodes
        code = lo.astype(np.int64) * n + hi
        bcode = self.bonds[:, 0].astype(np.int64) * n + self.bonds[:, 1]
        idx = np.searchsorted(bcode, code)
        signs = np.where(starts < ends, 1, -1).astype(np.int8)
        return idx, signs

    @property
    def tri_bonds(self) -> np.ndarray:
        """(T, 3) bond indices of the edges v0->v1, v1->v2, v2->v0."""
        return self._incidence[0]

    @property
    def tri_signs(self) -> np.ndarray:
        """(T, 3) +1 where the counter-clockwise traversal agrees with the bond orientation."""
        return self._incidence[1]

    @cached_property
    def bond_triangles(self) -> np.ndarray:
        """(B, 2) adjacent triangles of each bond, -1 where missing."""
        out = -np.ones((self.n_bonds, 2), dtype=np.int64)
        fill = np.zeros(self.n_bonds, dtype=np.int64)
        for t in range(self.n_triangles):
            for b in self.tri_bonds[t]:
                out[b, fill[b]] = t
                fill[b] += 1
        return out

    @cached_property
    def bond_classes(self) -> list[tuple]:
        """Bond class of each bond: lattice difference vector up to reversal."""
        ki = self.keys[self.bonds[:, 0]]
        kj = self.keys[self.bonds[:, 1]]
        fwd = np.column_stack([ki[:, 0], kj[:, 0], kj[:, 1] - ki[:, 1], kj[:, 2] - ki[:, 2]])
        bwd = np.column_stack([kj[:, 0], ki[:, 0], ki[:, 1] - kj[:, 1], ki[:, 2] - kj[:, 2]])
        out = []
        for f, b in zip(map(tuple, fwd.tolist()), map(tuple, bwd.tolist())):
            out.append(min(f, b))
        return out

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))

    def locate(self, points, tol: float | None = None) -> np.ndarray:
        """Index of the triangle whose barycenter equals each point, -1 if none."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if tol is None:
            tol = 1e-9 * self.epsilon
        d, i = self._bary_tree.query(pts)
        return np.where(d <= tol, i, -1)

    @cached_property
    def _bary_tree(self):
        from scipy.spatial import cKDTree
        return cKDTree(self.barycenters)

    def nearest_triangle(self, points) -> np.ndarray:
        """Triangle with the nearest barycenter to each point."""
        return self._bary_tree.query(np.atleast_2d(points))[1]

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "nodes": self.nodes.tolist(),
            "bonds": self.bonds.tolist(),
            "triangles": self.triangles.tolist(),
            "barycenters": self.barycenters.tolist(),
        }


def _strictly_inside(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Points strictly inside a counter-clockwise triangle."""
    p = np.atleast_2d(p)
    e = np.roll(tri, -1, axis=0) - tri
    w = p[:, None, :] - tri[None]
    cr = e[None, :, 0] * w[..., 1] - e[None, :, 1] * w[..., 0]
    scale = np.abs(e).max() ** 2
    return np.all(cr > 1e-12 * scale, axis=1)


def _triangles_inside(P: np.ndarray, omega: Domain) -> np.ndarray:
    """Which triangles (array (n, 3, 2)) lie in the closure of ``omega``."""
    flat = P.reshape(-1, 2)
    ok = omega.contains(flat, closed=True).reshape(-1, 3).all(axis=1)
    if omega.is_convex:
        return ok
    # a non-convex boundary may still cut through a triangle whose vertices
    # are all inside: look for boundary segments meeting the open interior
    a, b = omega.segments
    for t in np.nonzero(ok)[0]:
        tri = P[t]
        lo = tri.min(axis=0)
        hi = tri.max(axis=0)
        near = ~((np.maximum(a[:, 0], b[:, 0]) < lo[0]) | (np.minimum(a[:, 0], b[:, 0]) > hi[0])
                 | (np.maximum(a[:, 1], b[:, 1]) < lo[1]) | (np.minimum(a[:, 1], b[:, 1]) > hi[1]))
        for s in np.nonzero(near)[0]:
            probe = np.array([a[s], b[s], 0.5 * (a[s] + b[s])])
            if _strictly_inside(probe, tri).any() or any(
                    _proper_cross(tri[k], tri[(k + 1) % 3], a[s], b[s]) for k in range(3)):
                ok[t] = False
                break
    return ok


def _proper_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    tol = 1e-14
    return (o1 * o2 < -tol) and (o3 * o4 < -tol)


def clip(spec: LatticeSpec, tri: PeriodicTriangulation, omega: Domain,
         epsilon: float) -> ClippedMesh:
    """Keep the ``epsilon``-scaled lattice triangles contained in ``closure(omega)``.

    Raises
    ------
    EmptyMeshError
        If no triangle fits.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    x0, y0, x1, y1 = omega.bbox
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]) / epsilon
    lat = corners @ np.linalg.inv(spec.matrix).T
    tr = np.asarray(spec.translations) @ np.linalg.inv(spec.matrix).T
    amin = int(np.floor(lat[:, 0].min() - tr[:, 0].max())) - 2
    amax = int(np.ceil(lat[:, 0].max() - tr[:, 0].min())) + 2
    bmin = int(np.floor(lat[:, 1].min() - tr[:, 1].max())) - 2
    bmax = int(np.ceil(lat[:, 1].max() - tr[:, 1].min())) + 2
    ra = np.arange(amin, amax + 1)
    rb = np.arange(bmin, bmax + 1)
    aa, bb = np.meshgrid(ra, rb, indexing="ij")
    cells = np.column_stack([aa.ravel(), bb.ravel()])
    F = tri.triangles
    keys = np.broadcast_to(F[None], (len(cells),) + F.shape).copy()
    keys[..., 1] += cells[:, None, None, 0]
    keys[..., 2] += cells[:, None, None, 1]
    keys = keys.reshape(-1, 3, 3)
    P = epsilon * spec.points(keys)

    # cheap bounding box rejection before the exact test
    lo = P.min(axis=1)
    hi = P.max(axis=1)
    pad = 1e-12 * max(1.0, omega.diameter)
    box = ((lo[:, 0] >= x0 - pad) & (hi[:, 0] <= x1 + pad)
           & (lo[:, 1] >= y0 - pad) & (hi[:, 1] <= y1 + pad))
    keys, P = keys[box], P[box]
    if len(keys):
        keep = _triangles_inside(P, omega)
        keys, P = keys[keep], P[keep]
    if len(keys) == 0:
        raise EmptyMeshError(f"no lattice triangle of size epsilon={epsilon} fits in the domain")

    flat = keys.reshape(-1, 3)
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.lexsort((uniq[:, 0], uniq[:, 1], uniq[:, 2]))
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    node_keys = uniq[order]
    tris = rank[inverse].reshape(-1, 3)
    nodes = epsilon * spec.points(node_keys)

    # deterministic triangle order: by barycenter row then column
    bary = nodes[tris].mean(axis=1)
    torder = np.lexsort((bary[:, 0], np.round(bary[:, 1] / epsilon, 9)))
    tris = tris[torder]
    bary = bary[torder]

    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e = np.sort(e, axis=1)
    bonds = np.unique(e, axis=0)

    tris = np.ascontiguousarray(tris, dtype=np.int64)
    bonds = np.ascontiguousarray(bonds, dtype=np.int64)
    node_keys = np.ascontiguousarray(node_keys, dtype=np.int64)
    _freeze(nodes, bonds, tris, bary, node_keys)
    return ClippedMesh(float(epsilon), nodes, bonds, tris, bary, node_keys, omega, spec)


def make_mesh(omega: Domain, epsilon: float, spec: LatticeSpec | None = None) -> ClippedMesh:
    """Convenience wrapper: triangulate ``spec`` (square by default) and clip."""
    spec = spec or LatticeSpec.square()
    return clip(spec, build_triangulation(spec), omega, epsilon)
