"""Discrete anti-plane model: energies, plastic strain, circulation and the
minimal energy carried by a prescribed dislocation measure.

Displacement fields are plain float arrays with one value per mesh node,
measured in units of the Burgers modulus.  Bonds carry the orientation
stored in the mesh (smaller node index to larger).
"""

from __future__ import annotations

from collections import OrderedDict, deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .atoms import AtomicMeasure
from .lattice import ClippedMesh

__all__ = [
    "InteractionPotential",
    "EnergySpec",
    "InadmissibleMeasure",
    "nearest_integer",
    "plastic_strain",
    "circulation",
    "dislocation_measure",
    "bond_energies",
    "energy",
    "energy_local",
    "energy_region",
    "seed_field",
    "min_energy_given_mu",
    "relax",
    "quantization_constant",
    "dist2_to_integers",
]

# admissible residuals live in (-1/2, 1/2]; the solver works on a closed box
# shrunk by this margin
_ETA = 1e-9


class InadmissibleMeasure(ValueError):
    """The measure is not a lattice dislocation measure of the mesh."""


def nearest_integer(t):
    """Nearest integer, ties resolved towards the smaller integer.

    Examples
    --------
    >>> nearest_integer(0.5), nearest_integer(-0.5), nearest_integer(0.2)
    (0, -1, 0)
    """
    out = np.ceil(np.asarray(t, dtype=float) - 0.5).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def dist2_to_integers(t):
    """Squared distance to the nearest integer."""
    t = np.asarray(t, dtype=float)
    return (t - np.round(t)) ** 2


@dataclass(frozen=True)
class InteractionPotential:
    """The 1-periodic pair potential ``t -> c * profile(t)``.

    ``profile`` defaults to ``dist^2(t, Z)``.  Other 1-periodic profiles
    vanishing on the integers are accepted for energy evaluation only.
    """

    coefficient: float
    profile: Callable | None = None

    def __post_init__(self):
        if self.coefficient < 0:
            raise ValueError("coefficients must be non-negative")

    @property
    def is_quadratic(self) -> bool:
        return self.profile is None

    def __call__(self, t):
        if self.profile is None:
            return self.coefficient * dist2_to_integers(t)
        return self.coefficient * np.asarray(self.profile(np.asarray(t, dtype=float)))


class EnergySpec:
    """Interaction potentials attached to the bonds of a mesh.

    Parameters
    ----------
    mesh : ClippedMesh
    potentials : mapping
        Bond class (see :attr:`ClippedMesh.bond_classes`) to potential.
        Classes not listed get ``default``.
    default : InteractionPotential, optional
        Fallback for unlisted classes; zero coefficient if omitted.

    Raises
    ------
    ValueError
        If some triangle has fewer than two bonds with positive coefficient.
    """

    def __init__(self, mesh: ClippedMesh, potentials: Mapping | None = None,
                 default: InteractionPotential | None = None):
        self.mesh = mesh
        self.potentials = dict(potentials or {})
        self.default = default if default is not None else InteractionPotential(0.0)
        classes = mesh.bond_classes
        per_bond = [self.potentials.get(c, self.default) for c in classes]
        self._per_bond = per_bond
        self.coefficients = np.array([p.coefficient for p in per_bond], dtype=float)
        self.coefficients.setflags(write=False)
        self.quadratic = all(p.is_quadratic for p in per_bond)
        pos = (self.coefficients > 0)[mesh.tri_bonds].sum(axis=1)
        if np.any(pos < 2):
            raise ValueError("coercivity fails: a triangle has fewer than two active bonds")
        self._solver = None

    @classmethod
    def nearest_neighbour(cls, mesh: ClippedMesh, c: float = 1.0) -> "EnergySpec":
        """Coefficient ``c`` on the shortest bonds of the lattice, 0 elsewhere.

        On the square lattice this is the model with ``Q = c I``: axis bonds
        interact, diagonals do not.
        """
        lengths = np.linalg.norm(mesh.bond_vectors, axis=1) / mesh.epsilon
        shortest = lengths.min()
        pots = {}
        for cls_, ln in zip(mesh.bond_classes, lengths):
            pots[cls_] = InteractionPotential(c if ln < shortest * (1 + 1e-9) else 0.0)
        return cls(mesh, pots)

    @classmethod
    def uniform(cls, mesh: ClippedMesh, c: float = 1.0) -> "EnergySpec":
        """The same coefficient on every bond."""
        return cls(mesh, default=InteractionPotential(c))

    @classmethod
    def by_length(cls, mesh: ClippedMesh, table: Mapping[float, float]) -> "EnergySpec":
        """Coefficients keyed by unscaled bond length (matched to 1e-6)."""
        lengths = np.linalg.norm(mesh.bond_vectors, axis=1) / mesh.epsilon
        pots = {}
        for cls_, ln in zip(mesh.bond_classes, lengths):
            for key, c in table.items():
                if abs(ln - key) < 1e-6:
                    pots[cls_] = InteractionPotential(c)
                    break
        return cls(mesh, pots)

    def bond_energy(self, du: np.ndarray) -> np.ndarray:
        if self.quadratic:
            return self.coefficients * dist2_to_integers(du)
        return np.array([p(t) for p, t in zip(self._per_bond, du)], dtype=float)

    @property
    def solver(self) -> "_FieldSolver":
        if self._solver is None:
            self._solver = _FieldSolver(self)
        return self._solver


# ---------------------------------------------------------------------------
# pointwise quantities

def _differences(u: np.ndarray, mesh: ClippedMesh) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_nodes,):
        raise ValueError(f"expected {mesh.n_nodes} nodal values, got shape {u.shape}")
    return u[mesh.bonds[:, 1]] - u[mesh.bonds[:, 0]]


def plastic_strain(u, mesh: ClippedMesh, bond=None, reverse: bool = False):
    """Nearest-integer part of the jump of ``u`` along the stored bond orientation.

    Parameters
    ----------
    bond : int or array of int, optional
        Bond indices; all bonds if omitted.
    reverse : bool
        Use the opposite orientation ``i - j`` instead of the stored one.
    """
    du = _differences(u, mesh)
    if bond is not None:
        du = du[bond]
    if reverse:
        du = -du
    return nearest_integer(du)


def circulation(u, mesh: ClippedMesh, T=None):
    """Signed sum of plastic strains around counter-clockwise triangles.

    Returns an int for a single triangle index, else an array over ``T``
    (all triangles by default).
    """
    beta = plastic_strain(u, mesh)
    tb, ts = mesh.tri_bonds, mesh.tri_signs
    if T is None:
        return (ts * beta[tb]).sum(axis=1)
    T = np.asarray(T)
    out = (ts[T] * beta[tb[T]]).sum(axis=-1)
    return int(out) if out.ndim == 0 else out


def dislocation_measure(u, mesh: ClippedMesh) -> AtomicMeasure:
    """Atoms at barycenters of triangles with non-zero circulation."""
    alpha = circulation(u, mesh)
    nz = alpha != 0
    return AtomicMeasure(mesh.barycenters[nz], alpha[nz])


def bond_energies(u, spec: EnergySpec) -> np.ndarray:
    return spec.bond_energy(_differences(u, spec.mesh))


def energy(u, spec: EnergySpec) -> float:
    """Total stored energy, one term per bond."""
    return float(bond_energies(u, spec).sum())


def energy_local(u, spec: EnergySpec, T: int) -> float:
    """Energy of the three bonds of triangle ``T`` (each counted once)."""
    e = bond_energies(u, spec)
    return float(e[spec.mesh.tri_bonds[T]].sum())


def energy_region(u, spec: EnergySpec, triangles) -> float:
    """Energy of the bonds belonging to a set of triangles."""
    e = bond_energies(u, spec)
    bonds = np.unique(spec.mesh.tri_bonds[np.asarray(triangles, dtype=np.int64)])
    return float(e[bonds].sum())


# ---------------------------------------------------------------------------
# seeds

def _atoms_to_triangles(mu: AtomicMeasure, mesh: ClippedMesh) -> np.ndarray:
    tri = mesh.locate(mu.points)
    if np.any(tri < 0):
        raise InadmissibleMeasure("atom not located at a triangle barycenter")
    if np.any(np.abs(mu.weights) != 1):
        raise InadmissibleMeasure("lattice dislocation measures have weights +-1")
    return tri


def seed_field(mu: AtomicMeasure, mesh: ClippedMesh) -> np.ndarray:
    """Superposition of angular vortex fields centred at the atoms.

    ``u(i) = -sum_k d_k * angle(x_i - x_k) / (2 pi)``.  The minus sign
    matches the circulation convention: a phase increasing
    counter-clockwise has a jump of ``-1`` across its branch cut, hence
    circulation ``-1``.  The dislocation measure of the result is checked
    against ``mu``.

    Raises
    ------
    InadmissibleMeasure
        If an atom is not a barycenter, two atoms are closer than
        ``2 epsilon``, or the superposition fails to reproduce ``mu``.
    """
    if mu.is_empty:
        return np.zeros(mesh.n_nodes)
    _atoms_to_triangles(mu, mesh)
    p = mu.points
    if len(p) > 1:
        d = np.sqrt(((p[:, None] - p[None]) ** 2).sum(-1))
        d[np.diag_indices(len(p))] = np.inf
        if d.min() < 2 * mesh.epsilon * (1 - 1e-9):
            raise InadmissibleMeasure("atoms closer than 2*epsilon; the vortex ansatz is unreliable")
    x = mesh.nodes
    u = np.zeros(mesh.n_nodes)
    for q, dk in mu:
        u -= dk * np.arctan2(x[:, 1] - q[1], x[:, 0] - q[0]) / (2 * np.pi)
    if dislocation_measure(u, mesh) != mu:
        raise InadmissibleMeasure("vortex superposition does not reproduce the measure")
    return u


# ---------------------------------------------------------------------------
# exact minimal energy for quadratic profiles

class _LRU(OrderedDict):
    def __init__(self, maxsize: int):
        super().__init__()
        self.maxsize = maxsize

    def get_or(self, key, make):
        if key in self:
            self.move_to_end(key)
            return self[key]
        val = make(key)
        self[key] = val
        if len(self) > self.maxsize:
            self.popitem(last=False)
        return val


class _FieldSolver:
    """Weighted least squares and box-constrained corrections on one mesh.

    Every field with a prescribed dislocation measure can be shifted by an
    integer field so that its plastic strain equals a fixed integer cut
    field ``beta`` with the right circulation.  The minimal energy is then
    the convex problem

        min_u  sum_b c_b (Du - beta)_b^2   s.t.  -1/2 < (Du - beta)_b <= 1/2,

    solved here by superposing per-triangle least-squares responses and, if
    the box is violated, by an exact small dual problem over the offending
    bonds.
    """

    def __init__(self, spec: EnergySpec, cache_size: int = 2048):
        mesh = spec.mesh
        self.spec = spec
        self.mesh = mesh
        nb, nn = mesh.n_bonds, mesh.n_nodes
        rows = np.repeat(np.arange(nb), 2)
        cols = mesh.bonds.ravel()
        vals = np.tile([-1.0, 1.0], nb)
        self.D = sp.csr_matrix((vals, (rows, cols)), shape=(nb, nn))
        c = spec.coefficients
        L = (self.D.T @ sp.diags(c) @ self.D).tocsc()
        active = c > 0
        adj = sp.csr_matrix((np.ones(active.sum()), (mesh.bonds[active, 0], mesh.bonds[active, 1])),
                            shape=(nn, nn))
        ncomp, _ = connected_components(adj, directed=False)
        if ncomp != 1:
            raise ValueError("the active bonds do not connect the mesh")
        chi = nn - nb + mesh.n_triangles
        if chi != 1:
            raise ValueError("the mesh is not simply connected")
        self.lu = splu(L[1:, 1:].tocsc())
        self.DtC = (self.D.T @ sp.diags(c)).tocsr()
        self._build_cuts()
        self._tri_cache = _LRU(cache_size)
        self._bond_cache = _LRU(4 * cache_size)

    # gauge-fixed solve of L u = f (u[0] = 0)
    def _solve(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f)
        out = np.zeros((self.mesh.n_nodes,) + f.shape[1:])
        out[1:] = self.lu.solve(np.ascontiguousarray(f[1:]))
        return out

    def _build_cuts(self):
        mesh = self.mesh
        bt = mesh.bond_triangles
        parent_bond = -np.ones(mesh.n_triangles, dtype=np.int64)
        parent_tri = -np.ones(mesh.n_triangles, dtype=np.int64)
        seen = np.zeros(mesh.n_triangles, dtype=bool)
        queue = deque()
        for b in np.nonzero(bt[:, 1] < 0)[0]:
            t = bt[b, 0]
            if not seen[t]:
                seen[t] = True
                parent_bond[t] = b
                queue.append(t)
        while queue:
            t = queue.popleft()
            for b in mesh.tri_bonds[t]:
                for s in bt[b]:
                    if s >= 0 and not seen[s]:
                        seen[s] = True
                        parent_bond[s] = b
                        parent_tri[s] = t
                        queue.append(s)
        self.parent_bond = parent_bond
        self.parent_tri = parent_tri

    def cut(self, T: int) -> tuple[np.ndarray, np.ndarray]:
        """Sparse integer field with unit circulation on ``T`` only."""
        mesh = self.mesh
        idx, val = [], []
        cur = T
        while cur >= 0:
            b = self.parent_bond[cur]
            k = int(np.nonzero(mesh.tri_bonds[cur] == b)[0][0])
            idx.append(b)
            val.append(float(mesh.tri_signs[cur, k]))
            cur = self.parent_tri[cur]
        return np.asarray(idx), np.asarray(val)

    def _triangle_response(self, T: int):
        idx, val = self.cut(T)
        beta = np.zeros(self.mesh.n_bonds)
        np.add.at(beta, idx, val)
        u = self._solve(self.DtC @ beta)
        r = self.D @ u - beta
        return r, u

    def response(self, T: int):
        """Least-squares residual and field for a unit atom in ``T``."""
        return self._tri_cache.get_or(int(T), self._triangle_response)

    def responses(self, tris) -> tuple[np.ndarray, np.ndarray]:
        tris = [int(t) for t in tris]
        missing = [t for t in dict.fromkeys(tris) if t not in self._tri_cache]
        if len(missing) > 1:
            betas = np.zeros((self.mesh.n_bonds, len(missing)))
            for k, t in enumerate(missing):
                idx, val = self.cut(t)
                np.add.at(betas[:, k], idx, val)
            U = self._solve(self.DtC @ betas)
            R = self.D @ U - betas
            for k, t in enumerate(missing):
                self._tri_cache.get_or(t, lambda _t, k=k: (R[:, k].copy(), U[:, k].copy()))
        R = np.empty((self.mesh.n_bonds, len(tris)))
        U = np.empty((self.mesh.n_nodes, len(tris)))
        for k, t in enumerate(tris):
            R[:, k], U[:, k] = self.response(t)
        return R, U

    def _bond_response(self, b: int):
        d = np.zeros(self.mesh.n_nodes)
        i, j = self.mesh.bonds[b]
        d[i] -= 1.0
        d[j] += 1.0
        w = self._solve(d)
        return w, self.D @ w

    def bond_response(self, b: int):
        return self._bond_cache.get_or(int(b), self._bond_response)

    def unconstrained(self, tris, weights) -> tuple[np.ndarray, np.ndarray]:
        r = np.zeros(self.mesh.n_bonds)
        u = np.zeros(self.mesh.n_nodes)
        for t, d in zip(tris, weights):
            rt, ut = self.response(t)
            r += d * rt
            u += d * ut
        return r, u

    def value(self, r: np.ndarray) -> float:
        return float(np.dot(self.spec.coefficients, r * r))

    def constrained(self, r0: np.ndarray, u0: np.ndarray | None = None,
                    max_outer: int = 60):
        """Exact minimizer of the box-constrained problem from the free residual.

        Returns ``(value, r, u)``; ``value`` is ``inf`` when the box is
        infeasible (no field carries the measure).
        """
        value, r, lam, work = self.constrained_dual(r0, max_outer=max_outer)
        if not np.isfinite(value):
            return np.inf, None, None
        u = None
        if u0 is not None:
            u = u0.copy()
            if len(work):
                W = np.column_stack([self.bond_response(b)[0] for b in work])
                u = u0 - W @ lam
        return value, r, u

    def constrained_dual(self, r0: np.ndarray, work=None, lam0=None, max_outer: int = 60):
        """Box-constrained minimum with its multipliers.

        ``work`` and ``lam0`` warm-start the bond working set.  Returns
        ``(value, r, lam, work)``, with ``lam`` supported on ``work``; any
        multiplier vector ``lam`` on bonds ``S`` certifies the lower bound
        ``value(r0) - 2 (lam.H.lam/2 - lam.r0[S] + hi |lam|_1)`` with
        ``H = (D L^-1 D^T)[S, S]`` (see :meth:`dual_bound`).
        """
        lo, hi = -0.5 + _ETA, 0.5 - _ETA
        empty = np.zeros(0)
        if np.all((r0 >= lo) & (r0 <= hi)):
            return self.value(r0), r0, empty, []
        work = [] if work is None else [int(b) for b in work]
        lam = np.zeros(len(work)) if lam0 is None else np.asarray(lam0, dtype=float).copy()
        seen = set(work)
        for b in np.nonzero(np.abs(r0) > 0.35)[0]:
            if int(b) not in seen:
                work.append(int(b))
                seen.add(int(b))
                lam = np.append(lam, 0.0)
        r = r0
        for _ in range(max_outer):
            Z = np.column_stack([self.bond_response(b)[1] for b in work])
            H = Z[work, :]
            lam = _box_dual(H, r0[work], lo, hi, lam)
            if lam is None:
                return np.inf, None, None, work
            r = r0 - Z @ lam
            bad = np.nonzero((r < lo - 1e-12) | (r > hi + 1e-12))[0]
            new = [int(b) for b in bad if int(b) not in seen]
            if not new:
                break
            work += new
            seen.update(new)
            lam = np.concatenate([lam, np.zeros(len(new))])
        else:
            return np.inf, None, None, work
        if np.any((r < -0.5) | (r > 0.5)):
            return np.inf, None, None, work
        return self.value(r), r, lam, work

    def dual_bound(self, r0: np.ndarray, work, lam) -> float:
        """Weak-duality lower bound on the constrained minimum."""
        hi = 0.5 - _ETA
        q = self.value(r0)
        if len(work) == 0:
            return q
        Z = np.column_stack([self.bond_response(b)[1] for b in work])
        H = Z[list(work), :]
        lam = np.asarray(lam, dtype=float)
        return q - 2 * (0.5 * lam @ H @ lam - lam @ r0[list(work)] + hi * np.abs(lam).sum())


def _box_dual(H: np.ndarray, g: np.ndarray, lo: float, hi: float,
              lam0: np.ndarray, tol: float = 1e-15, max_sweeps: int = 20000):
    """Minimize ``lam.H.lam/2 - lam.g + sum max(hi*lam, lo*lam)`` exactly.

    Coordinate descent followed by an active-set polish.  Returns ``None``
    when the iterates diverge, which signals an infeasible primal box.
    """
    n = len(g)
    lam = lam0.astype(float).copy()
    diag = np.diag(H).copy()
    if np.any(diag <= 0):
        return None
    Hl = H @ lam
    for sweep in range(max_sweeps):
        change = 0.0
        for i in range(n):
            gi = g[i] - (Hl[i] - diag[i] * lam[i])
            if gi > hi:
                new = (gi - hi) / diag[i]
            elif gi < lo:
                new = (gi - lo) / diag[i]
            else:
                new = 0.0
            delta = new - lam[i]
            if delta != 0.0:
                Hl += delta * H[:, i]
                lam[i] = new
                change = max(change, abs(delta))
        if change < tol * max(1.0, np.abs(lam).max()):
            break
        if np.abs(lam).max() > 1e8:
            return None
    # polish on the identified active set
    act = np.abs(lam) > 0
    if act.any():
        bound = np.where(lam[act] > 0, hi, lo)
        Ha = H[np.ix_(act, act)]
        sol, *_ = np.linalg.lstsq(Ha, g[act] - bound, rcond=None)
        trial = np.zeros(n)
        trial[act] = sol
        res = g - H @ trial
        same_sign = np.all(np.sign(sol) == np.sign(lam[act]))
        feas = np.all((res[~act] >= lo - 1e-13) & (res[~act] <= hi + 1e-13))
        if same_sign and feas:
            lam = trial
    return lam


def min_energy_given_mu(mu: AtomicMeasure, spec: EnergySpec, check: bool = True):
    """Minimal stored energy among fields whose dislocation measure is ``mu``.

    For quadratic potentials the problem is convex once the plastic strain
    is fixed up to integer gauge, and the returned value is the infimum
    itself (up to the ``1e-9`` shrink of the admissible box).  Other
    potentials fall back to node-wise relaxation from :func:`seed_field`.

    Returns
    -------
    value : float
        ``inf`` if no field carries ``mu``.
    u : ndarray or None
        A minimizing field, with ``dislocation_measure(u) == mu`` checked
        when ``check`` is set.
    """
    mesh = spec.mesh
    if mu.is_empty:
        return 0.0, np.zeros(mesh.n_nodes)
    tris = _atoms_to_triangles(mu, mesh)
    if len(np.unique(tris)) != len(tris):
        raise InadmissibleMeasure("two atoms in one triangle")
    if not spec.quadratic:
        u = seed_field(mu, mesh)
        value, u, _ = relax(u, spec)
        return value, u
    solver = spec.solver
    r0, u0 = solver.unconstrained(tris, mu.weights)
    value, r, u = solver.constrained(r0, u0)
    if not np.isfinite(value):
        return np.inf, None
    if check:
        got = dislocation_measure(u, mesh)
        if got != mu:
            raise RuntimeError("minimizer does not carry the prescribed measure")
    return value, u


# ---------------------------------------------------------------------------
# node-wise relaxation

def _node_argmin(uj: np.ndarray, cj: np.ndarray, ui: float) -> float:
    """Exact minimizer of ``sum c_j dist^2(x - u_j, Z)`` nearest to ``ui``."""
    w = cj.sum()
    if w <= 0:
        return ui
    bp = np.sort(np.mod(uj + 0.5, 1.0))
    ends = np.concatenate([bp, [bp[0] + 1.0]])
    best_x, best_v = ui, np.inf
    for a, b in zip(ends[:-1], ends[1:]):
        if b - a <= 0:
            continue
        mid = 0.5 * (a + b)
        n = np.ceil(mid - uj - 0.5)
        x = np.clip(np.dot(cj, uj + n) / w, a, b)
        v = np.dot(cj, dist2_to_integers(x - uj))
        if v < best_v - 1e-15:
            best_x, best_v = x, v
    return best_x + np.round(ui - best_x)


def relax(u, spec: EnergySpec, tol: float | None = None, max_sweeps: int = 500):
    """Gauss-Seidel sweeps of exact node-wise minimization at fixed measure.

    Node updates that would change the circulation of an adjacent triangle
    are rejected.  Sweeps stop once the energy decrease drops below ``tol``
    (default ``1e-10`` times the number of bonds); the result is a local
    minimum in the node-wise sense.

    Returns
    -------
    value : float
    u : ndarray
    history : list of float
        Energy after each sweep.
    """
    mesh = spec.mesh
    u = np.array(u, dtype=float)
    if tol is None:
        tol = 1e-10 * mesh.n_bonds
    c = spec.coefficients
    nb = mesh.bonds
    # incidence lists
    nbr = [[] for _ in range(mesh.n_nodes)]
    for b, (i, j) in enumerate(nb):
        nbr[i].append((j, c[b]))
        nbr[j].append((i, c[b]))
    nbr = [(np.array([q for q, _ in lst], dtype=np.int64), np.array([w for _, w in lst]))
           for lst in nbr]
    node_tris = [[] for _ in range(mesh.n_nodes)]
    for t, tri in enumerate(mesh.triangles):
        for v in tri:
            node_tris[v].append(t)
    node_tris = [np.array(x, dtype=np.int64) for x in node_tris]
    alpha = circulation(u, mesh)
    e = energy(u, spec)
    history = [e]
    for _ in range(max_sweeps):
        for i in range(mesh.n_nodes):
            js, cs = nbr[i]
            old = u[i]
            new = _node_argmin(u[js], cs, old)
            if new == old:
                continue
            u[i] = new
            ts = node_tris[i]
            if np.any(circulation(u, mesh, ts) != alpha[ts]):
                u[i] = old
        e_new = energy(u, spec)
        history.append(e_new)
        if e - e_new < tol:
            e = e_new
            break
        e = e_new
    return e, u, history


# ---------------------------------------------------------------------------
# quantization constant

@lru_cache(maxsize=64)
def _c0_cached(coeffs: tuple, grid: float, levels: int) -> float:
    c01, c12, c20 = coeffs
    n = int(round(1.0 / grid))
    s = np.arange(n) * grid

    def evaluate(u1, u2):
        a = nearest_integer(u1) + nearest_integer(u2 - u1) + nearest_integer(-u2)
        e = c01 * dist2_to_integers(u1) + c12 * dist2_to_integers(u2 - u1) + c20 * dist2_to_integers(u2)
        return np.where(a != 0, e, np.inf)

    u1, u2 = np.meshgrid(s, s, indexing="ij")
    val = evaluate(u1, u2)
    best = float(val.min())
    # refine around the best few grid points
    flat = np.argsort(val, axis=None)[:32]
    centres = np.column_stack([u1.ravel()[flat], u2.ravel()[flat]])
    h = grid
    for _ in range(levels):
        fine = np.linspace(-h, h, 41)
        new_centres = []
        for cx, cy in centres:
            a, b = np.meshgrid(cx + fine, cy + fine, indexing="ij")
            v = evaluate(a, b)
            k = np.argmin(v)
            best = min(best, float(v.ravel()[k]))
            new_centres.append((a.ravel()[k], b.ravel()[k]))
        centres = new_centres
        h = fine[1] - fine[0]
    return best


def quantization_constant(coefficients=(1.0, 1.0, 1.0), grid: float = 1e-3,
                          levels: int = 3) -> float:
    """Least energy of one triangle carrying non-zero circulation.

    Brute-force minimization over ``(u1, u2)`` with ``u0 = 0`` on a grid of
    spacing ``grid``, refined ``levels`` times around the best points.  The
    coefficients belong to the edges ``v0v1, v1v2, v2v0``.  Results are
    cached per coefficient triple.
    """
    key = tuple(float(x) for x in coefficients)
    if len(key) != 3:
        raise ValueError("three bond coefficients expected")
    return _c0_cached(key, float(grid), int(levels))


def mesh_quantization_constant(spec: EnergySpec, **kw) -> float:
    """Smallest quantization constant over the triangle classes of a mesh."""
    coeffs = spec.coefficients[spec.mesh.tri_bonds]
    classes = {tuple(sorted(row)) for row in np.round(coeffs, 12).tolist()}
    return min(quantization_constant(c, **kw) for c in classes)
