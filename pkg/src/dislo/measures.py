"""Distances between atomic measures: the flat norm, the crystalline
dissipation with boundary connections, and support diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assignment import brute_force_assignment, solve_assignment
from .atoms import AtomicMeasure
from .crystalline import PolyhedralNorm, norm
from .geometry import Domain, segment_distance

__all__ = [
    "AtomicMeasure",
    "MatchingProblem",
    "MatchingResult",
    "boundary_cost",
    "dissipation_same_sign",
    "dissipation",
    "flat_distance",
    "support_hausdorff",
    "detect_spurious_dipoles",
    "dissipation_flat_constant",
]


def boundary_cost(points, omega: Domain, phi: PolyhedralNorm) -> np.ndarray:
    """``min_{b in boundary} phi(x - b)^2`` for each point, computed exactly.

    Along a boundary segment ``b = a + s (c - a)`` the map ``s -> phi(x - b)``
    is convex; for a polyhedral norm it is piecewise linear, so its minimum
    sits at an endpoint or at a crossing of two linear pieces.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a, c = omega.segments
    if phi.euclidean:
        return segment_distance(pts, a, c) ** 2
    N = phi.polar_vertices
    d = c - a                                   # (S, 2)
    w = pts[:, None, :] - a[None]               # (P, S, 2)
    ck = np.einsum("psj,kj->psk", w, N)         # <n_k, x - a>
    gk = d @ N.T                                # <n_k, d>, (S, K)
    K = len(N)
    ss = [np.zeros(ck.shape[:2]), np.ones(ck.shape[:2])]
    for k in range(K):
        for l in range(k + 1, K):
            den = gk[:, k] - gk[:, l]
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (ck[..., k] - ck[..., l]) / den[None]
            s = np.where(np.isfinite(s), np.clip(s, 0.0, 1.0), 0.0)
            ss.append(s)
    S = np.stack(ss, axis=-1)                   # (P, S, m)
    vals = np.max(ck[..., None, :] - S[..., None] * gk[None, :, None, :], axis=-1)
    return np.min(vals, axis=(1, 2)) ** 2


@dataclass
class MatchingResult:
    """Optimal pairing: ``pairs`` of (left, right) indices plus boundary exits."""

    total: float
    pairs: list = field(default_factory=list)
    left_exits: list = field(default_factory=list)
    right_exits: list = field(default_factory=list)


@dataclass
class MatchingProblem:
    """Bipartite matching where unmatched points may connect to the boundary.

    ``pair_cost[i, j]`` is the price of pairing left ``i`` with right ``j``;
    ``left_exit[i]`` and ``right_exit[j]`` are the prices of sending a point
    to the boundary.  Boundary-to-boundary pairs are free, so the two sides
    may have different sizes.  ``None`` exit costs forbid boundary
    connections.
    """

    pair_cost: np.ndarray
    left_exit: np.ndarray | None = None
    right_exit: np.ndarray | None = None

    def augmented(self) -> np.ndarray:
        P = np.asarray(self.pair_cost, dtype=float)
        nl, nr = P.shape
        finite = [P[np.isfinite(P)]]
        if self.left_exit is not None:
            finite.append(np.asarray(self.left_exit, dtype=float))
        if self.right_exit is not None:
            finite.append(np.asarray(self.right_exit, dtype=float))
        vals = np.concatenate([f.ravel() for f in finite]) if finite else np.zeros(1)
        big = 1e6 * (1.0 + (np.abs(vals).max() if vals.size else 0.0)) * (nl + nr + 1)
        n = nl + nr
        A = np.full((n, n), big)
        A[:nl, :nr] = np.where(np.isfinite(P), P, big)
        if self.left_exit is not None:
            A[np.arange(nl), nr + np.arange(nl)] = self.left_exit
        if self.right_exit is not None:
            A[nl + np.arange(nr), np.arange(nr)] = self.right_exit
        A[nl:, nr:] = 0.0
        self._big = big
        return A

    def solve(self, method: str = "hungarian") -> MatchingResult:
        P = np.asarray(self.pair_cost, dtype=float)
        nl, nr = P.shape
        if nl + nr == 0:
            return MatchingResult(0.0)
        A = self.augmented()
        if method == "brute":
            col, _ = brute_force_assignment(A)
        else:
            col, _ = solve_assignment(A)
        res = MatchingResult(0.0)
        total = 0.0
        for i in range(nl):
            j = col[i]
            if A[i, j] >= self._big:
                return MatchingResult(np.inf)
            total += A[i, j]
            if j < nr:
                res.pairs.append((i, int(j)))
            else:
                res.left_exits.append(i)
        for k in range(nr):
            j = col[nl + k]
            if j < nr:
                if A[nl + k, j] >= self._big:
                    return MatchingResult(np.inf)
                total += A[nl + k, j]
                res.right_exits.append(int(j))
        res.total = float(total)
        return res


def _pair_phi2(x: np.ndarray, y: np.ndarray, phi: PolyhedralNorm) -> np.ndarray:
    diff = x[:, None, :] - y[None, :, :]
    return norm(phi, diff) ** 2 if diff.size else np.zeros((len(x), len(y)))


def _check_positive(nu: AtomicMeasure, name: str):
    if np.any(nu.weights <= 0):
        raise ValueError(f"{name} must have positive weights")


def dissipation_same_sign(nu1: AtomicMeasure, nu2: AtomicMeasure, omega: Domain | None,
                          phi: PolyhedralNorm, method: str = "hungarian") -> float:
    """Least total ``phi^2`` cost of transporting ``nu1`` onto ``nu2``.

    Unit masses are paired one-to-one; any mass may instead connect to its
    ``phi^2``-nearest boundary point.  With ``omega=None`` no boundary is
    available and unequal masses give ``inf``.
    """
    _check_positive(nu1, "nu1")
    _check_positive(nu2, "nu2")
    q = nu1.expanded()
    p = nu2.expanded()
    if len(q) == 0 and len(p) == 0:
        return 0.0
    P = _pair_phi2(q, p, phi)
    if omega is None:
        le = re = None
    else:
        le = boundary_cost(q, omega, phi) if len(q) else np.zeros(0)
        re = boundary_cost(p, omega, phi) if len(p) else np.zeros(0)
    return MatchingProblem(P, le, re).solve(method).total


def dissipation(mu1: AtomicMeasure, mu2: AtomicMeasure, omega: Domain | None,
                phi: PolyhedralNorm, method: str = "hungarian") -> float:
    """Crystalline dissipation between signed measures.

    Positive atoms of ``mu1`` and negative atoms of ``mu2`` are transported
    onto positive atoms of ``mu2`` and negative atoms of ``mu1``, so an
    annihilating dipole pays for the distance its two atoms travel to meet.
    """
    left = mu1.positive() + mu2.negative()
    right = mu2.positive() + mu1.negative()
    return dissipation_same_sign(left, right, omega, phi, method)


def flat_distance(mu1: AtomicMeasure, mu2: AtomicMeasure, omega: Domain | None) -> float:
    """Flat distance between integer atomic measures.

    Exact value of ``sup { int f d(mu1 - mu2) : |f| <= 1, Lip(f) <= 1,
    f = 0 on the boundary }`` computed as a matching of the positive part
    of ``mu1 - mu2`` against its negative part: pairs cost
    ``min(|x - y|, d(x) + d(y), 2)``, single atoms ``min(d(x), 1)`` with ``d``
    the distance to the boundary.  Without a domain the boundary terms are
    dropped.
    """
    diff = mu1 - mu2
    pos = diff.positive().expanded()
    neg = diff.negative().expanded()
    if len(pos) == 0 and len(neg) == 0:
        return 0.0
    D = np.sqrt(((pos[:, None, :] - neg[None, :, :]) ** 2).sum(-1)) if len(pos) and len(neg) \
        else np.zeros((len(pos), len(neg)))
    if omega is None:
        return MatchingProblem(np.minimum(D, 2.0)).solve().total
    dp = omega.boundary_distance(pos) if len(pos) else np.zeros(0)
    dn = omega.boundary_distance(neg) if len(neg) else np.zeros(0)
    P = np.minimum(np.minimum(D, dp[:, None] + dn[None, :]), 2.0)
    return MatchingProblem(P, np.minimum(dp, 1.0), np.minimum(dn, 1.0)).solve().total


def support_hausdorff(mu1: AtomicMeasure, mu2: AtomicMeasure) -> float:
    """Hausdorff distance between the supports."""
    if mu1.is_empty or mu2.is_empty:
        raise ValueError("Hausdorff distance needs non-empty supports")
    d = np.sqrt(((mu1.points[:, None, :] - mu2.points[None, :, :]) ** 2).sum(-1))
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def detect_spurious_dipoles(mu_eps: AtomicMeasure, mu_limit: AtomicMeasure,
                            radius: float) -> AtomicMeasure:
    """``|mu_eps|`` restricted outside the ``radius``-balls around ``supp(mu_limit)``."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    a = mu_eps.abs()
    if a.is_empty or mu_limit.is_empty:
        return a
    d = np.sqrt(((a.points[:, None, :] - mu_limit.points[None, :, :]) ** 2).sum(-1))
    far = d.min(axis=1) >= radius
    return a.restrict(far)


def dissipation_flat_constant(omega: Domain, phi: PolyhedralNorm) -> float:
    """A constant ``C`` with ``dissipation <= C * flat_distance`` on ``omega``.

    Every flat-optimal pairing yields a competitor for the dissipation whose
    costs are squared lengths bounded by ``R^2 diam`` times the flat costs,
    ``R`` the largest unit-ball vertex length; the caps add a factor
    ``max(1, diam)``.
    """
    diam = omega.diameter
    return phi.max_vertex_norm ** 2 * diam * max(1.0, diam)
