"""Crystalline norms, their duals, the conjugate of half the squared norm,
its subdifferential and velocity selection rules.

A polyhedral norm is stored through the vertices ``w_k`` of its unit ball;
the polar (dual) ball has vertices ``n_k`` with ``<n_k, w_k> =
<n_k, w_{k+1}> = 1``, so that

    phi(v)     = max_k <n_k, v>,
    phi_dual(x) = max_k <w_k, x>.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "PolyhedralNorm",
    "SubdifferentialFace",
    "norm",
    "dual_norm",
    "psi",
    "subdifferential",
    "select_velocity",
    "fenchel_residual",
    "prox_half_squared",
]

TIE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class PolyhedralNorm:
    """A symmetric polyhedral norm, or the Euclidean norm.

    Parameters
    ----------
    vertices : (K, 2) array_like, optional
        Extreme points of the unit ball, closed under negation.  Sorted by
        angle on construction.
    euclidean : bool
        Ignore ``vertices`` and represent ``|.|``.
    """

    vertices: np.ndarray | None = field(default=None)
    euclidean: bool = False

    def __post_init__(self):
        if self.euclidean:
            object.__setattr__(self, "vertices", None)
            return
        if self.vertices is None:
            raise ValueError("polyhedral norm needs vertices")
        w = np.asarray(self.vertices, dtype=float)
        if w.ndim != 2 or w.shape[1] != 2 or len(w) < 4:
            raise ValueError("need at least four 2D vertices")
        ang = np.arctan2(w[:, 1], w[:, 0])
        w = w[np.argsort(ang)]
        scale = np.abs(w).max()
        for v in w:
            if not np.any(np.all(np.abs(w + v) <= 1e-9 * scale, axis=1)):
                raise ValueError("vertex set is not symmetric under negation")
        nxt = np.roll(w, -1, axis=0)
        cross = w[:, 0] * nxt[:, 1] - w[:, 1] * nxt[:, 0]
        if np.any(cross <= 1e-12 * scale ** 2):
            raise ValueError("origin not interior or consecutive vertices aligned")
        # extremality: each vertex strictly outside the segment of its neighbours
        prv = np.roll(w, 1, axis=0)
        turn = (w[:, 0] - prv[:, 0]) * (nxt[:, 1] - w[:, 1]) - (w[:, 1] - prv[:, 1]) * (nxt[:, 0] - w[:, 0])
        if np.any(turn <= 1e-12 * scale ** 2):
            raise ValueError("some vertex is not an extreme point of the ball")
        w.setflags(write=False)
        object.__setattr__(self, "vertices", w)

    # factories ----------------------------------------------------------
    @classmethod
    def euclidean_norm(cls) -> "PolyhedralNorm":
        return cls(euclidean=True)

    @classmethod
    def l1(cls) -> "PolyhedralNorm":
        """Unit ball with vertices ``+-e1, +-e2``: glide along the axes."""
        return cls(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]))

    @classmethod
    def linf(cls) -> "PolyhedralNorm":
        return cls(np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]]))

    @classmethod
    def hexagonal(cls, phase: float = 0.0) -> "PolyhedralNorm":
        """Six unit vertices 60 degrees apart (triangular-lattice glide)."""
        t = phase + np.pi / 3 * np.arange(6)
        return cls(np.column_stack([np.cos(t), np.sin(t)]))

    @classmethod
    def regular(cls, n_directions: int, phase: float = 0.0) -> "PolyhedralNorm":
        t = phase + np.pi / n_directions * np.arange(2 * n_directions)
        return cls(np.column_stack([np.cos(t), np.sin(t)]))

    @classmethod
    def from_json(cls, data) -> "PolyhedralNorm":
        if isinstance(data, str):
            key = data.lower()
            if key in ("euclid", "euclidean", "l2"):
                return cls.euclidean_norm()
            if key == "l1":
                return cls.l1()
            if key in ("linf", "l-inf"):
                return cls.linf()
            if key in ("hex", "hexagonal"):
                return cls.hexagonal()
            raise ValueError(f"unknown norm name {data!r}")
        kind = data.get("kind", "polyhedral")
        if kind == "euclidean":
            return cls.euclidean_norm()
        if kind != "polyhedral":
            raise ValueError(f"unknown norm kind {kind!r}")
        return cls(np.asarray(data["vertices"], dtype=float))

    def to_json(self) -> dict:
        if self.euclidean:
            return {"kind": "euclidean"}
        return {"kind": "polyhedral", "vertices": self.vertices.tolist()}

    # geometry -----------------------------------------------------------
    @cached_property
    def polar_vertices(self) -> np.ndarray:
        """Vertices ``n_k`` of the dual ball, ``n_k`` normal to the edge ``w_k w_{k+1}``."""
        w = self.vertices
        nxt = np.roll(w, -1, axis=0)
        out = np.empty_like(w)
        for k in range(len(w)):
            out[k] = np.linalg.solve(np.array([w[k], nxt[k]]), np.ones(2))
        out.setflags(write=False)
        return out

    @property
    def max_vertex_norm(self) -> float:
        """Largest Euclidean length of a unit-ball vertex, ``max_{phi(v)=1} |v|``."""
        if self.euclidean:
            return 1.0
        return float(np.linalg.norm(self.vertices, axis=1).max())

    @property
    def dual_bound(self) -> float:
        """Constant ``C`` with ``|z| <= C |xi|`` for every ``z`` in the subdifferential at ``xi``.

        Equals the squared largest vertex length.
        """
        return self.max_vertex_norm ** 2

    def __call__(self, v) -> np.ndarray:
        return norm(self, v)

    def __repr__(self) -> str:
        if self.euclidean:
            return "PolyhedralNorm(euclidean)"
        return f"PolyhedralNorm({len(self.vertices)} vertices)"


def norm(phi: PolyhedralNorm, v):
    """Minkowski gauge of the unit ball."""
    v = np.asarray(v, dtype=float)
    if phi.euclidean:
        out = np.linalg.norm(v, axis=-1)
    else:
        out = np.max(v @ phi.polar_vertices.T, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def dual_norm(phi: PolyhedralNorm, xi):
    """``max_k <xi, w_k>`` over unit-ball vertices."""
    xi = np.asarray(xi, dtype=float)
    if phi.euclidean:
        out = np.linalg.norm(xi, axis=-1)
    else:
        out = np.max(xi @ phi.vertices.T, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def psi(phi: PolyhedralNorm, xi):
    """Conjugate of ``phi^2 / 2``, equal to ``dual_norm(xi)^2 / 2``."""
    d = dual_norm(phi, xi)
    return 0.5 * d * d


@dataclass(frozen=True)
class SubdifferentialFace:
    """A point or a segment of the plane."""

    kind: str
    endpoints: tuple

    def __post_init__(self):
        pts = tuple(np.asarray(p, dtype=float).reshape(2) for p in self.endpoints)
        if self.kind == "point":
            if len(pts) != 1:
                raise ValueError("point face needs one endpoint")
        elif self.kind == "segment":
            if len(pts) != 2 or np.allclose(pts[0], pts[1], rtol=0, atol=0):
                raise ValueError("segment face needs two distinct endpoints")
        else:
            raise ValueError(f"unknown face kind {self.kind!r}")
        object.__setattr__(self, "endpoints", pts)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.endpoints)

    def project(self, z) -> np.ndarray:
        """Euclidean projection of ``z`` onto the face."""
        z = np.asarray(z, dtype=float)
        if self.kind == "point":
            return self.endpoints[0].copy()
        a, b = self.endpoints
        d = b - a
        dd = np.dot(d, d)
        if dd == 0.0:       # endpoints so close that the squared length underflows
            return a.copy()
        t = np.clip(np.dot(z - a, d) / dd, 0.0, 1.0)
        return a + t * d

    def distance(self, z) -> float:
        return float(np.linalg.norm(np.asarray(z, dtype=float) - self.project(z)))

    def contains(self, z, tol: float = 1e-9) -> bool:
        return self.distance(z) <= tol

    def scaled(self, t: float) -> "SubdifferentialFace":
        return SubdifferentialFace(self.kind, tuple(t * p for p in self.endpoints))


def subdifferential(phi: PolyhedralNorm, xi) -> SubdifferentialFace:
    """The subdifferential of ``psi`` at ``xi``.

    It equals ``dual_norm(xi)`` times the face of the unit ball exposed by
    ``xi``: a vertex, or an edge when two vertices tie within a relative
    tolerance of ``1e-9``.
    """
    xi = np.asarray(xi, dtype=float).reshape(2)
    if phi.euclidean or not np.any(xi):
        return SubdifferentialFace("point", (xi.copy(),))
    w = phi.vertices
    s = w @ xi
    m = s.max()
    tol = TIE_RTOL * np.linalg.norm(xi) * phi.max_vertex_norm
    top = np.nonzero(s >= m - tol)[0]
    if len(top) == 1:
        return SubdifferentialFace("point", (m * w[top[0]],))
    # ties are adjacent vertices of the ball; keep the pair spanning the exposed edge
    if len(top) > 2:
        top = top[np.argsort(-s[top])[:2]]
    a, b = sorted(top.tolist())
    return SubdifferentialFace("segment", (m * w[a], m * w[b]))


def select_velocity(face: SubdifferentialFace, rule: str = "min-norm", hint=None) -> np.ndarray:
    """Pick one point of a face.

    Parameters
    ----------
    rule : {"min-norm", "extreme-first", "proximal"}
        ``min-norm`` returns the Euclidean-least element, ``extreme-first``
        the lexicographically first endpoint, and ``proximal`` the
        projection of ``hint`` (the point produced by a proximal step).
    """
    if face.kind == "point":
        return face.endpoints[0].copy()
    if rule == "min-norm":
        return face.project(np.zeros(2))
    if rule == "extreme-first":
        a, b = face.endpoints
        return (a if tuple(a) < tuple(b) else b).copy()
    if rule == "proximal":
        if hint is None:
            raise ValueError("the proximal rule needs the proximal point as hint")
        return face.project(hint)
    raise ValueError(f"unknown selection rule {rule!r}")


def fenchel_residual(phi: PolyhedralNorm, xi, z):
    """``psi(xi) + phi(z)^2 / 2 - <xi, z>``, non-negative and zero exactly on the graph
    of the subdifferential."""
    xi = np.asarray(xi, dtype=float)
    z = np.asarray(z, dtype=float)
    return psi(phi, xi) + 0.5 * norm(phi, z) ** 2 - np.sum(xi * z, axis=-1)


def prox_half_squared(phi: PolyhedralNorm, v, a: float) -> np.ndarray:
    """Proximal map of ``(a/2) phi^2``: ``argmin_z (a/2) phi(z)^2 + |z - v|^2 / 2``.

    For a polyhedral norm the minimizer lies on a cone where ``phi`` is
    linear (a facet cone: ``phi(z) = <n, z>``) or on a vertex ray
    (``z = s w``).  Both cases have closed forms; all candidates are scored
    with the true objective.

    Parameters
    ----------
    v : (..., 2) array
    a : float
        Non-negative weight.
    """
    v = np.asarray(v, dtype=float)
    if a < 0:
        raise ValueError("weight must be non-negative")
    if phi.euclidean:
        return v / (1.0 + a)
    flat = v.reshape(-1, 2)
    W = phi.vertices
    N = phi.polar_vertices
    cands = [np.zeros_like(flat)]
    for n in N:
        # (I + a n n^T) z = v  =>  z = v - a <n, v> n / (1 + a |n|^2)
        cands.append(flat - (a * (flat @ n) / (1.0 + a * (n @ n)))[:, None] * n)
    for w in W:
        s = np.maximum(0.0, (flat @ w) / (a + w @ w))
        cands.append(s[:, None] * w)
    C = np.stack(cands, axis=1)
    obj = 0.5 * a * norm(phi, C) ** 2 + 0.5 * ((C - flat[:, None, :]) ** 2).sum(-1)
    best = np.argmin(obj, axis=1)
    out = C[np.arange(len(flat)), best]
    return out.reshape(v.shape)
