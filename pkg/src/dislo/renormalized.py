"""The renormalized energy of point singularities in a polygonal domain.

For charges ``d_i`` at ``y_i`` in ``U``

    calW_U(nu) = -pi sum_{i != j} d_i d_j log|y_i - y_j| - pi sum_i d_i R(y_i),

where ``R`` is harmonic in ``U`` with boundary values
``-sum_j d_j log|y - y_j|``, and ``W_I = calW / (2 pi^2)``.  An anisotropy
``Q`` enters through the change of variables ``y = Qt^{-1/2} x`` with
``Qt = Q / sqrt(det Q)``: ``W_Q(x) = sqrt(det Q) W_I(Qt^{-1/2} x)``.

The harmonic part is computed with P1 finite elements on a triangulation
made of a square grid of spacing ``h`` in the interior and boundary samples
of spacing at most ``h``.  Values at the atoms use cubic convolution on the
grid (C1, third order), so gradients are exact derivatives of the
discrete energy.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.spatial import Delaunay, cKDTree

from .atoms import AtomicMeasure
from .geometry import Domain, regular_polygon_vertices

__all__ = [
    "AnisotropyQ",
    "LaplaceSolver",
    "HarmonicField",
    "RenormEvaluator",
    "PuncturedDomain",
    "IsoEnergy",
    "get_solver",
    "harmonic_correction",
    "renorm_energy_iso",
    "renorm_energy_aniso",
    "grad_W",
    "min_separation",
    "in_K",
    "continuity_check_punctured",
]


# ---------------------------------------------------------------------------
# cubic convolution kernel (a = -1/2)

def _keys_weights(f: np.ndarray):
    """Weights and derivatives for stencil offsets -1, 0, 1, 2 at fraction ``f``."""
    t = np.stack([1 + f, f, 1 - f, 2 - f], axis=-1)   # distances to the 4 nodes
    s = np.array([1.0, 1.0, -1.0, -1.0])              # d t / d f
    a = -0.5
    at = np.abs(t)
    inner = (a + 2) * at ** 3 - (a + 3) * at ** 2 + 1
    outer = a * at ** 3 - 5 * a * at ** 2 + 8 * a * at - 4 * a
    w = np.where(at <= 1, inner, outer)
    dinner = 3 * (a + 2) * at ** 2 - 2 * (a + 3) * at
    douter = 3 * a * at ** 2 - 10 * a * at + 8 * a
    dw = np.where(at <= 1, dinner, douter) * s
    return w, dw


class LaplaceSolver:
    """P1 finite elements for the Dirichlet problem on a polygonal domain.

    Parameters
    ----------
    domain : Domain
        Outer polygon, possibly with holes.
    h : float
        Grid spacing; boundary samples are at most ``h`` apart.
    """

    def __init__(self, domain: Domain, h: float):
        if not h > 0:
            raise ValueError("h must be positive")
        self.domain = domain
        self.h = float(h)
        self._build_mesh()
        self._assemble()

    # mesh ---------------------------------------------------------------
    def _build_mesh(self):
        dom, h = self.domain, self.h
        a, b = dom.segments
        bpts = []
        for p, q in zip(a, b):
            n = max(1, int(np.ceil(np.linalg.norm(q - p) / h - 1e-9)))
            s = np.arange(n)[:, None] / n
            bpts.append(p + s * (q - p))
        bpts = np.concatenate(bpts)
        x0, y0, x1, y1 = dom.bbox
        self.origin = np.array([x0, y0])
        nx = int(np.floor((x1 - x0) / h)) + 1
        ny = int(np.floor((y1 - y0) / h)) + 1
        ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        gp = self.origin + h * np.column_stack([ii.ravel(), jj.ravel()])
        # coarse distance estimate from dense boundary samples, exact near the boundary
        dense = []
        for p, q in zip(a, b):
            n = max(1, int(np.ceil(np.linalg.norm(q - p) / (0.25 * h))))
            dense.append(p + (np.arange(n)[:, None] / n) * (q - p))
        tree = cKDTree(np.concatenate(dense))
        dist, _ = tree.query(gp)
        near = dist < 2.0 * h
        if near.any():
            dist[near] = dom.boundary_distance(gp[near])
        inside = np.zeros(len(gp), dtype=bool)
        cand = dist >= 0.6 * h
        inside[cand] = dom.contains(gp[cand], closed=False)
        grid_idx = -np.ones(nx * ny, dtype=np.int64)
        nint = int(inside.sum())
        grid_idx[inside] = np.arange(nint)
        self.grid_shape = (nx, ny)
        self.grid_index = grid_idx.reshape(nx, ny)
        interior = gp[inside]
        nodes = np.concatenate([interior, bpts])
        self.nodes = nodes
        self.n_interior = nint
        self.interior = np.arange(nint)
        self.boundary = np.arange(nint, len(nodes))
        tri = Delaunay(nodes).simplices
        cen = nodes[tri].mean(axis=1)
        keep = dom.contains(cen, closed=False)
        tri = tri[keep]
        P = nodes[tri]
        area = 0.5 * ((P[:, 1, 0] - P[:, 0, 0]) * (P[:, 2, 1] - P[:, 0, 1])
                      - (P[:, 1, 1] - P[:, 0, 1]) * (P[:, 2, 0] - P[:, 0, 0]))
        tri = np.where((area < 0)[:, None], tri[:, [0, 2, 1]], tri)
        area = np.abs(area)
        good = area > 1e-12 * h * h
        self.triangles = tri[good]
        self.areas = area[good]
        # conformity: boundary edges of the triangulation must cover the polygon
        e = np.sort(np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                                    self.triangles[:, [2, 0]]]), axis=1)
        uniq, cnt = np.unique(e, axis=0, return_counts=True)
        outer = uniq[cnt == 1]
        length = np.linalg.norm(nodes[outer[:, 1]] - nodes[outer[:, 0]], axis=1).sum()
        if abs(length - dom.perimeter) > 1e-8 * dom.perimeter:
            raise RuntimeError("finite element mesh does not conform to the boundary")
        if np.any(outer < nint):
            raise RuntimeError("interior node on the mesh boundary")

    def _assemble(self):
        P = self.nodes[self.triangles]
        # gradients of barycentric coordinates
        e0 = P[:, 2] - P[:, 1]
        e1 = P[:, 0] - P[:, 2]
        e2 = P[:, 1] - P[:, 0]
        E = np.stack([e0, e1, e2], axis=1)               # opposite edges
        G = np.stack([-E[..., 1], E[..., 0]], axis=-1) / (2 * self.areas[:, None, None])
        K = np.einsum("tik,tjk->tij", G, G) * self.areas[:, None, None]
        rows = np.repeat(self.triangles, 3, axis=1).ravel()
        cols = np.tile(self.triangles, (1, 3)).ravel()
        A = sp.csr_matrix((K.ravel(), (rows, cols)), shape=(len(self.nodes),) * 2)
        ni = self.n_interior
        self.A_II = A[:ni, :ni].tocsc()
        self.A_IB = A[:ni, ni:].tocsr()
        self.lu = splu(self.A_II)
        self._tri_grad = G
        self._delaunay = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def boundary_nodes(self) -> np.ndarray:
        return self.nodes[self.boundary]

    def solve(self, g: np.ndarray) -> np.ndarray:
        """Discrete harmonic extension of boundary values ``g`` (columns allowed)."""
        g = np.asarray(g, dtype=float)
        rhs = -(self.A_IB @ g)
        ui = self.lu.solve(np.ascontiguousarray(rhs))
        return np.concatenate([ui, g], axis=0)

    def residual(self, U: np.ndarray, g: np.ndarray) -> float:
        """Relative residual of the interior equations."""
        ni = self.n_interior
        rhs = self.A_IB @ g
        r = self.A_II @ U[:ni] + rhs
        return float(np.linalg.norm(r) / max(np.linalg.norm(rhs), 1e-300))

    # evaluation ---------------------------------------------------------
    def _stencil(self, points: np.ndarray):
        s = (points - self.origin) / self.h
        base = np.floor(s).astype(np.int64)
        f = s - base
        nx, ny = self.grid_shape
        offs = np.arange(-1, 3)
        ix = base[:, 0:1] + offs[None]
        iy = base[:, 1:2] + offs[None]
        okx = (ix >= 0) & (ix < nx)
        oky = (iy >= 0) & (iy < ny)
        ixc = np.clip(ix, 0, nx - 1)
        iyc = np.clip(iy, 0, ny - 1)
        idx = self.grid_index[ixc[:, :, None], iyc[:, None, :]]
        ok = okx.all(1) & oky.all(1) & (idx >= 0).all(axis=(1, 2))
        return idx, f, ok

    def interpolate(self, U: np.ndarray, points, gradient: bool = True):
        """Values (and gradients) of nodal fields at points.

        Cubic convolution on the grid where its 4x4 stencil is available,
        linear interpolation on the containing triangle otherwise.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        U = np.asarray(U, dtype=float)
        single = U.ndim == 1
        U2 = U[:, None] if single else U
        k = U2.shape[1]
        val = np.empty((len(pts), k))
        grad = np.empty((len(pts), k, 2))
        idx, f, ok = self._stencil(pts)
        if ok.any():
            wx, dwx = _keys_weights(f[ok, 0])
            wy, dwy = _keys_weights(f[ok, 1])
            Us = U2[idx[ok]]                               # (p, 4, 4, k)
            val[ok] = np.einsum("pi,pj,pijk->pk", wx, wy, Us)
            grad[ok, :, 0] = np.einsum("pi,pj,pijk->pk", dwx, wy, Us) / self.h
            grad[ok, :, 1] = np.einsum("pi,pj,pijk->pk", wx, dwy, Us) / self.h
        if (~ok).any():
            v, g = self._linear(U2, pts[~ok])
            val[~ok] = v
            grad[~ok] = g
        if single:
            val, grad = val[:, 0], grad[:, 0]
        return (val, grad) if gradient else val

    def _locate(self, pts: np.ndarray) -> np.ndarray:
        P = self.nodes[self.triangles]
        cen = P.mean(axis=1)
        if self._delaunay is None:
            self._delaunay = cKDTree(cen)
        out = -np.ones(len(pts), dtype=np.int64)
        _, cand = self._delaunay.query(pts, k=min(16, len(cen)))
        cand = np.atleast_2d(cand)
        for n, p in enumerate(pts):
            for t in cand[n]:
                lam = self._bary(t, p)
                if np.all(lam >= -1e-12):
                    out[n] = t
                    break
        return out

    def _bary(self, t: int, p: np.ndarray) -> np.ndarray:
        # phi_i vanishes at the next vertex, so phi_i(p) = G_i . (p - P_{i+1})
        G = self._tri_grad[t]
        P = self.nodes[self.triangles[t]]
        return np.array([G[i] @ (p - P[(i + 1) % 3]) for i in range(3)])

    def _linear(self, U2: np.ndarray, pts: np.ndarray):
        tri = self._locate(pts)
        if np.any(tri < 0):
            raise ValueError("evaluation point outside the finite element mesh")
        val = np.empty((len(pts), U2.shape[1]))
        grad = np.empty((len(pts), U2.shape[1], 2))
        for n, (t, p) in enumerate(zip(tri, pts)):
            lam = self._bary(t, p)
            nodes = self.triangles[t]
            val[n] = lam @ U2[nodes]
            grad[n] = np.einsum("ik,ij->kj", U2[nodes], self._tri_grad[t])
        return val, grad


_SOLVERS: "OrderedDict[tuple, LaplaceSolver]" = OrderedDict()


def get_solver(domain: Domain, h: float, cache: int = 6) -> LaplaceSolver:
    """Factorized solver for ``(domain, h)``, cached across calls."""
    key = (domain, float(h))
    if key in _SOLVERS:
        _SOLVERS.move_to_end(key)
        return _SOLVERS[key]
    s = LaplaceSolver(domain, h)
    _SOLVERS[key] = s
    while len(_SOLVERS) > cache:
        _SOLVERS.popitem(last=False)
    return s


@dataclass
class HarmonicField:
    """A discrete harmonic function on a solver mesh."""

    solver: LaplaceSolver
    values: np.ndarray = field(repr=False)

    def __call__(self, points) -> np.ndarray:
        return self.solver.interpolate(self.values, points, gradient=False)

    def gradient(self, points) -> np.ndarray:
        return self.solver.interpolate(self.values, points)[1]


def _check_atoms(solver: LaplaceSolver, y: np.ndarray):
    dom = solver.domain
    if len(y) > 1:
        d = np.sqrt(((y[:, None] - y[None]) ** 2).sum(-1))
        d[np.diag_indices(len(y))] = np.inf
        if d.min() <= 0:
            raise ValueError("coincident atoms")
    inside = dom.contains(y, closed=False)
    clear = dom.boundary_distance(y) >= 2 * solver.h
    if not np.all(inside & clear):
        raise ValueError("atom outside the domain or within 2h of its boundary")


def _boundary_data(solver: LaplaceSolver, y: np.ndarray):
    b = solver.boundary_nodes
    diff = b[:, None, :] - y[None, :, :]            # (nB, M, 2)
    r2 = (diff ** 2).sum(-1)
    G = -0.5 * np.log(r2)
    dG = diff / r2[..., None]                       # d/dy of -log|b - y|
    return G, dG


def harmonic_correction(nu: AtomicMeasure, U: Domain, h: float) -> HarmonicField:
    """Harmonic ``R`` with boundary values ``-sum d_i log|y - y_i|``."""
    solver = get_solver(U, h)
    y = nu.points
    if nu.is_empty:
        return HarmonicField(solver, np.zeros(solver.n_nodes))
    _check_atoms(solver, y)
    G, _ = _boundary_data(solver, y)
    g = G @ nu.weights.astype(float)
    return HarmonicField(solver, solver.solve(g))


class IsoEnergy(NamedTuple):
    calW: float
    W: float


def _iso(solver: LaplaceSolver, y: np.ndarray, d: np.ndarray, gradient: bool):
    """``calW`` and, optionally, its exact gradient for the discrete solver."""
    M = len(y)
    d = np.asarray(d, dtype=float)
    diff = y[:, None, :] - y[None, :, :]
    r2 = (diff ** 2).sum(-1)
    np.fill_diagonal(r2, 1.0)
    dd = d[:, None] * d[None, :]
    np.fill_diagonal(dd, 0.0)
    pair = -np.pi * np.sum(dd * 0.5 * np.log(r2))
    G, dG = _boundary_data(solver, y)
    if not gradient:
        R = solver.solve(G @ d)
        Ry = solver.interpolate(R, y, gradient=False)
        return pair - np.pi * float(d @ Ry), None
    cols = np.concatenate([G, dG[..., 0], dG[..., 1]], axis=1)
    U = solver.solve(cols)
    val, grad = solver.interpolate(U, y)             # (M, 3M), (M, 3M, 2)
    H = val[:, :M]                                   # H[i, j] = H_j(y_i)
    T = -np.pi * float(d @ H @ d)
    g_pair = -2 * np.pi * np.einsum("kj,kjc->kc", dd / r2, diff)
    # derivative through the evaluation point
    gH = grad[:, :M, :]                              # grad H_j at y_k
    g_eval = -np.pi * d[:, None] * np.einsum("j,kjc->kc", d, gH)
    # derivative through the boundary data of H_k
    Vx = val[:, M:2 * M]                             # V_k^x(y_i)
    Vy = val[:, 2 * M:]
    g_data = -np.pi * d[:, None] * np.column_stack([d @ Vx, d @ Vy])
    return pair + T, g_pair + g_eval + g_data


def renorm_energy_iso(nu: AtomicMeasure, U: Domain, h: float) -> IsoEnergy:
    """Isotropic renormalized energy ``calW_U(nu)`` and ``W_I = calW / (2 pi^2)``.

    Raises
    ------
    ValueError
        For coincident atoms or atoms within ``2h`` of the boundary.
    """
    if nu.is_empty:
        return IsoEnergy(0.0, 0.0)
    solver = get_solver(U, h)
    _check_atoms(solver, nu.points)
    val, _ = _iso(solver, nu.points, nu.weights, gradient=False)
    return IsoEnergy(val, val / (2 * np.pi ** 2))


@dataclass(frozen=True, eq=False)
class AnisotropyQ:
    """A symmetric positive definite 2x2 matrix with its normalized square roots."""

    Q: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.shape != (2, 2) or not np.allclose(Q, Q.T, atol=1e-14 * np.abs(Q).max()):
            raise ValueError("Q must be a symmetric 2x2 matrix")
        ev, V = np.linalg.eigh(Q)
        if ev.min() <= 0:
            raise ValueError("Q must be positive definite")
        object.__setattr__(self, "Q", Q)
        lam = float(np.sqrt(ev.prod()))
        object.__setattr__(self, "lam", lam)
        t = ev / lam
        object.__setattr__(self, "Qt", Q / lam)
        object.__setattr__(self, "Qt_half", (V * np.sqrt(t)) @ V.T)
        object.__setattr__(self, "Qt_inv_half", (V / np.sqrt(t)) @ V.T)

    @classmethod
    def identity(cls) -> "AnisotropyQ":
        return cls(np.eye(2))


class RenormEvaluator:
    """Positional renormalized energy ``W(x)`` for fixed charges.

    Parameters
    ----------
    domain : Domain
    h : float
        Solver resolution in the transformed coordinates.
    Q : AnisotropyQ or array, optional
        Identity by default.
    signs : sequence of int, optional
        Charges ``d_i`` of the positional form; may be omitted when only
        measures are evaluated.
    """

    def __init__(self, domain: Domain, h: float = 1 / 64, Q=None, signs=None):
        self.domain = domain
        self.h = float(h)
        if Q is None:
            Q = AnisotropyQ.identity()
        elif not isinstance(Q, AnisotropyQ):
            Q = AnisotropyQ(np.asarray(Q, dtype=float))
        self.Q = Q
        self.A = Q.Qt_inv_half
        self.signs = None if signs is None else np.asarray(signs, dtype=float)
        self.tdomain = domain if np.allclose(self.A, np.eye(2)) else domain.transformed(self.A)
        self._solver = None

    @property
    def solver(self) -> LaplaceSolver:
        if self._solver is None:
            self._solver = get_solver(self.tdomain, self.h)
        return self._solver

    def with_signs(self, signs) -> "RenormEvaluator":
        ev = RenormEvaluator(self.domain, self.h, self.Q, signs)
        ev._solver = self._solver
        return ev

    def _prep(self, x, signs):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = self.signs if signs is None else np.asarray(signs, dtype=float)
        if d is None or len(d) != len(x):
            raise ValueError("charges missing or of the wrong length")
        y = x @ self.A.T
        return y, d

    def admissible(self, x) -> bool:
        """Whether ``x`` is far enough from the boundary for evaluation."""
        y = np.atleast_2d(np.asarray(x, dtype=float)) @ self.A.T
        try:
            _check_atoms(self.solver, y)
        except ValueError:
            return False
        return True

    def energy(self, x, signs=None) -> float:
        y, d = self._prep(x, signs)
        _check_atoms(self.solver, y)
        val, _ = _iso(self.solver, y, d, gradient=False)
        return self.Q.lam * val / (2 * np.pi ** 2)

    def energy_and_gradient(self, x, signs=None):
        y, d = self._prep(x, signs)
        _check_atoms(self.solver, y)
        val, g = _iso(self.solver, y, d, gradient=True)
        s = self.Q.lam / (2 * np.pi ** 2)
        return s * val, s * g @ self.A          # A symmetric: grad_x = A grad_y

    def gradient(self, x, signs=None) -> np.ndarray:
        return self.energy_and_gradient(x, signs)[1]

    def regular_gradient(self, x, signs=None) -> np.ndarray:
        """Gradient of the boundary (harmonic) part alone."""
        y, d = self._prep(x, signs)
        _, g = self.energy_and_gradient(x, signs)
        diff = y[:, None, :] - y[None, :, :]
        r2 = (diff ** 2).sum(-1)
        np.fill_diagonal(r2, 1.0)
        dd = d[:, None] * d[None, :]
        np.fill_diagonal(dd, 0.0)
        g_pair = -2 * np.pi * np.einsum("kj,kjc->kc", dd / r2, diff)
        s = self.Q.lam / (2 * np.pi ** 2)
        return g - s * g_pair @ self.A

    def measure_energy(self, mu: AtomicMeasure) -> float:
        if mu.is_empty:
            return 0.0
        return self.energy(mu.points, mu.weights)


def renorm_energy_aniso(mu: AtomicMeasure, evaluator: RenormEvaluator) -> float:
    """Anisotropic renormalized energy ``W_Q`` of a measure."""
    return evaluator.measure_energy(mu)


def grad_W(x, evaluator: RenormEvaluator, signs=None) -> np.ndarray:
    """Gradient of the positional energy, shape ``(M, 2)``.

    Raises
    ------
    ValueError
        If some atom is within ``2h`` of the boundary or atoms coincide.
    """
    return evaluator.gradient(x, signs)


def min_separation(x, omega: Domain) -> float:
    """``min`` of pairwise distances and distances to the boundary."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = float(omega.boundary_distance(x).min())
    if len(x) > 1:
        d = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))
        d[np.diag_indices(len(x))] = np.inf
        out = min(out, float(d.min()))
    return out


def in_K(x, omega: Domain, rho: float) -> bool:
    """Membership in ``K_rho``: atoms inside and ``min_separation >= rho``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return bool(np.all(omega.contains(x, closed=False)) and min_separation(x, omega) >= rho)


@dataclass(frozen=True)
class PuncturedDomain:
    """A domain with polygonal balls of radius ``radius`` removed around ``centers``."""

    base: Domain
    centers: tuple
    radius: float
    sides: int = 64

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "centers", tuple(tuple(map(float, c)) for c in self.centers))

    @property
    def domain(self) -> Domain:
        if not self.centers:
            return self.base
        c = np.asarray(self.centers)
        if np.any(self.base.boundary_distance(c) <= self.radius) or \
                not np.all(self.base.contains(c, closed=False)):
            raise ValueError("puncture meets the boundary")
        if len(c) > 1:
            d = np.sqrt(((c[:, None] - c[None]) ** 2).sum(-1))
            d[np.diag_indices(len(c))] = np.inf
            if d.min() <= 2 * self.radius:
                raise ValueError("punctures overlap")
        holes = [regular_polygon_vertices(self.sides, self.radius, tuple(p)) for p in c]
        return self.base.with_holes(holes)


def continuity_check_punctured(mu: AtomicMeasure, nu: AtomicMeasure, omega: Domain,
                               radii, h: float | None = None, Q=None) -> list[dict]:
    """``W_Q(mu)`` on ``omega`` with balls of each radius removed around ``supp nu``.

    Returns one row per radius with the value, the unpunctured reference
    and their absolute deviation.

    Raises
    ------
    ValueError
        If the supports of ``mu`` and ``nu`` meet.
    """
    radii = [float(r) for r in radii]
    if not mu.is_empty and not nu.is_empty:
        d = np.sqrt(((mu.points[:, None] - nu.points[None]) ** 2).sum(-1))
        if d.min() == 0:
            raise ValueError("supports of mu and nu overlap")
    if h is None:
        h = min(radii) / 4
    ref = RenormEvaluator(omega, h, Q).measure_energy(mu)
    rows = []
    for r in radii:
        dom = PuncturedDomain(omega, tuple(map(tuple, nu.points)), r).domain
        val = RenormEvaluator(dom, h, Q).measure_energy(mu)
        rows.append({"radius": r, "value": val, "reference": ref, "deviation": abs(val - ref)})
    return rows
