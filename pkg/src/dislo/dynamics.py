"""Minimizing movements for dislocations.

Two schemes are provided.  At lattice level each step minimizes

    F(mu) + D_phi(mu, mu_prev) / (2 tau)   s.t.  flat(mu, mu_prev) <= delta

over measures obtained by moving, annihilating or expelling the current
atoms.  At the level of the renormalized energy each step minimizes

    W(x) + sum_i phi(x_i - x_prev_i)^2 / (2 tau)

by forward-backward splitting with the exact proximal map of ``phi^2``.
The module also holds the affine interpolation of trajectories, a
checker for approximate solutions of the limiting differential inclusion
``x_i' in dPsi(-grad_i W(x))`` and the two convergence studies.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .atoms import AtomicMeasure
from .crystalline import (PolyhedralNorm, fenchel_residual, norm, prox_half_squared,
                          subdifferential)
from .discrete import EnergySpec, InadmissibleMeasure, _ETA, min_energy_given_mu
from .geometry import Domain
from .lattice import LatticeSpec, make_mesh
from .measures import (MatchingProblem, boundary_cost, detect_spurious_dipoles,
                       dissipation, flat_distance)
from .renormalized import RenormEvaluator, min_separation

__all__ = [
    "DiscreteFlowConfig",
    "RenormFlowConfig",
    "Trajectory",
    "StepResult",
    "DiscreteStepper",
    "PiecewiseAffinePath",
    "mm_step_discrete",
    "mm_run_discrete",
    "mm_step_renorm",
    "renorm_step",
    "mm_run_renorm",
    "interpolate",
    "verify_tau_solution",
    "estimate_gradient_bound",
    "default_delta",
    "symmetric_dipole_gaps",
    "inclusion_limit_study",
    "epsilon_limit_study",
]


# ---------------------------------------------------------------------------
# configurations and records

@dataclass
class DiscreteFlowConfig:
    """Parameters of the lattice-level scheme.

    ``mode`` is ``"local"`` (branch and bound over moves within ``radius``)
    or ``"exhaustive"`` (every combination of moves, each candidate scored
    exactly); ``radius`` defaults to ``delta``.  ``nucleation`` adds single
    fresh dipoles to the exhaustive candidate set.
    """

    epsilon: float
    tau: float
    delta: float
    mode: str = "local"
    radius: float | None = None
    max_steps: int = 100
    nucleation: bool = False

    def __post_init__(self):
        for name in ("epsilon", "tau", "delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.mode not in ("local", "exhaustive"):
            raise ValueError("mode must be 'local' or 'exhaustive'")
        if self.radius is None:
            self.radius = self.delta
        if self.mode == "local" and self.radius < self.delta:
            raise ValueError("local radius must be at least delta")
        if self.nucleation and self.mode != "exhaustive":
            raise ValueError("nucleation is only available in exhaustive mode")


@dataclass
class RenormFlowConfig:
    """Parameters of the scheme for the renormalized energy.

    The step is accepted when the Fenchel residual of the optimality
    condition drops below ``tol``.
    """

    tau: float
    delta: float
    r: float
    tol: float = 1e-9
    max_steps: int = 100_000
    max_iter: int = 2000

    def __post_init__(self):
        for name in ("tau", "delta", "r"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 2 * self.delta < self.r:
            raise ValueError("need 2 delta < r")


def default_delta(r: float, c0: float, grad_bound: float) -> float:
    """``min(r/4, c0 / (2 M))`` with ``M`` a gradient bound on ``K_{r/2}``."""
    if grad_bound <= 0:
        return r / 4
    return min(r / 4, c0 / (2 * grad_bound))


@dataclass
class StepResult:
    """Outcome of one minimizing-movement step."""

    state: object
    energy: float
    dissipation: float
    objective: float
    status: str = "ok"
    n_candidates: int = 0
    n_evaluated: int = 0
    residual: float = 0.0
    iterations: int = 0
    gradient: np.ndarray | None = None


@dataclass
class Trajectory:
    """Times, states and per-step records of a run.

    ``states`` holds :class:`AtomicMeasure` objects for lattice runs and
    ``(M, 2)`` arrays for renormalized runs; ``dissipations[k]`` is the cost
    of the step ending at ``times[k]`` (zero for the initial state).
    """

    times: list
    states: list
    energies: list
    dissipations: list
    stop_reason: str = ""
    kind: str = "measure"
    signs: np.ndarray | None = None
    gradients: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1

    def positions(self) -> np.ndarray:
        if self.kind != "positions":
            raise ValueError("not a position trajectory")
        return np.stack(self.states)


# ---------------------------------------------------------------------------
# lattice-level scheme

class DiscreteStepper:
    """Minimizing-movement steps for ``F_eps`` with caches shared across steps.

    Parameters
    ----------
    spec : EnergySpec
        Quadratic potentials are required for the exact energy.
    phi : PolyhedralNorm
    cfg : DiscreteFlowConfig
    """

    def __init__(self, spec: EnergySpec, phi: PolyhedralNorm, cfg: DiscreteFlowConfig):
        if not spec.quadratic:
            raise ValueError("the discrete scheme needs quadratic potentials")
        self.spec = spec
        self.mesh = spec.mesh
        self.phi = phi
        self.cfg = cfg
        self.domain: Domain = spec.mesh.domain
        self.solver = spec.solver
        self.bary = self.mesh.barycenters
        self.tree = cKDTree(self.bary)
        self.bdist = self.domain.boundary_distance(self.bary)
        self._single: dict[int, tuple] = {}
        self._F: dict = {}
        self._bc = None

    def _boundary_costs(self) -> np.ndarray:
        if self._bc is None:
            self._bc = boundary_cost(self.bary, self.domain, self.phi)
        return self._bc

    def dissipation(self, key, prev_key) -> float:
        """``D_phi`` between two lattice measures given as (triangle, sign) tuples.

        Same matching as :func:`dislo.measures.dissipation`, on raw arrays.
        """
        bc = self._boundary_costs()
        left = [t for t, s in key if s > 0] + [t for t, s in prev_key if s < 0]
        right = [t for t, s in prev_key if s > 0] + [t for t, s in key if s < 0]
        if not left and not right:
            return 0.0
        L = self.bary[left]
        R = self.bary[right]
        if left and right:
            P = norm(self.phi, L[:, None, :] - R[None, :, :]) ** 2
        else:
            P = np.zeros((len(left), len(right)))
        return MatchingProblem(P, bc[left], bc[right]).solve().total

    # energies ---------------------------------------------------------------
    def _single_data(self, T: int):
        """Optimal multipliers of a unit atom in ``T`` (dense over bonds)."""
        if T not in self._single:
            r0, _ = self.solver.response(T)
            v, _, lam, work = self.solver.constrained_dual(r0)
            if not np.isfinite(v):
                lam, work = np.zeros(0), []
            self._single[T] = (np.asarray(work, dtype=np.int64), np.asarray(lam))
        return self._single[T]

    def energy(self, tris, signs) -> float:
        """Exact ``F`` of atoms ``signs`` at the barycenters of ``tris``."""
        key = tuple(sorted(zip((int(t) for t in tris), (int(s) for s in signs))))
        if key in self._F:
            return self._F[key]
        if not key:
            self._F[key] = 0.0
            return 0.0
        tr = [k[0] for k in key]
        sg = np.array([k[1] for k in key], dtype=float)
        r0, _ = self.solver.unconstrained(tr, sg)
        work, lam = [], []
        for t, s in zip(tr, sg):
            w, l = self._single_data(t)
            for b, x in zip(w, l):
                work.append(int(b))
                lam.append(s * x)
        # merge duplicates
        if work:
            uw, inv = np.unique(np.asarray(work), return_inverse=True)
            lam0 = np.zeros(len(uw))
            np.add.at(lam0, inv, lam)
            work = list(uw)
        else:
            lam0 = None
        v, *_ = self.solver.constrained_dual(r0, work, lam0)
        self._F[key] = float(v)
        return float(v)

    def _bound_tables(self, tris: np.ndarray):
        """Matrices whose quadratic forms give lower bounds on ``F``."""
        s = self.solver
        R, _ = s.responses(tris)
        c = self.spec.coefficients
        G = R.T @ (c[:, None] * R)
        n = len(tris)
        Lam = np.zeros((self.mesh.n_bonds, n))
        for k, t in enumerate(tris):
            w, l = self._single_data(int(t))
            Lam[w, k] = l
        B = Lam.T @ R
        cols = np.nonzero(np.abs(Lam).sum(0) > 0)[0]
        A = np.zeros((n, n))
        if len(cols):
            X = s._solve(s.D.T @ Lam[:, cols])
            HL = s.D @ X
            A[np.ix_(cols, cols)] = Lam[:, cols].T @ HL
        hi = 0.5 - _ETA
        sig = 2 * hi * np.abs(Lam).sum(0)
        return G + 2 * B - A, sig

    # candidates -------------------------------------------------------------
    def _options(self, x, T, d, i, xs, ds, radius, delta):
        """Per-atom moves: (kind, target triangle, flat cost)."""
        opts = [("s", int(T), 0.0)]
        dx = float(self.domain.boundary_distance(x[None])[0])
        near = self.tree.query_ball_point(x, radius)
        for t in near:
            if t == T:
                continue
            cost = min(float(np.linalg.norm(self.bary[t] - x)), dx + self.bdist[t], 2.0)
            opts.append(("m", int(t), cost))
        if dx < delta:
            seen = set(near)
            for t in np.nonzero(self.bdist <= delta - dx)[0]:
                if int(t) not in seen and t != T:
                    opts.append(("m", int(t), min(dx + self.bdist[t], 2.0)))
        if dx <= delta:
            opts.append(("x", -1, min(dx, 1.0)))
        for j in range(len(xs)):
            if j != i and ds[j] == -d:
                dj = float(self.domain.boundary_distance(xs[j][None])[0])
                cost = min(float(np.linalg.norm(xs[j] - x)), dx + dj, 2.0)
                if cost <= delta:
                    opts.append(("a", j, cost))
        return opts

    def _assemble(self, choice, tris, ds):
        """New (triangles, signs) for a choice tuple, or None if inadmissible."""
        out_t, out_s = [], []
        for i, (kind, tgt, _) in enumerate(choice):
            if kind == "s":
                out_t.append(tris[i])
                out_s.append(ds[i])
            elif kind == "m":
                out_t.append(tgt)
                out_s.append(ds[i])
            elif kind == "a":
                if choice[tgt][0] != "a" or choice[tgt][1] != i:
                    return None
        if len(set(out_t)) != len(out_t):
            return None
        return out_t, out_s

    def _generate_local(self, tris, xs, ds):
        cfg = self.cfg
        M = len(tris)
        opts = [self._options(xs[i], tris[i], ds[i], i, xs, ds, cfg.radius, cfg.delta)
                for i in range(M)]
        out = {}
        choice = [None] * M

        def rec(i, cost):
            if i == M:
                res = self._assemble(choice, tris, ds)
                if res is not None:
                    key = tuple(sorted(zip(*res))) if res[0] else ()
                    if key not in out or cost < out[key]:
                        out[key] = cost
                return
            if choice[i] is not None:          # fixed by an annihilation partner
                rec(i + 1, cost)
                return
            for o in opts[i]:
                kind, tgt, c = o
                extra = c
                if cost + extra > cfg.delta + 1e-12:
                    continue
                if kind == "a":
                    if tgt < i or choice[tgt] is not None:
                        continue
                    choice[i] = o
                    choice[tgt] = ("a", i, 0.0)
                    rec(i + 1, cost + extra)
                    choice[tgt] = None
                else:
                    choice[i] = o
                    rec(i + 1, cost + extra)
                choice[i] = None

        rec(0, 0.0)
        return out

    def _generate_exhaustive(self, tris, xs, ds, prev: AtomicMeasure):
        cfg = self.cfg
        M = len(tris)
        opts = [self._options(xs[i], tris[i], ds[i], i, xs, ds, cfg.delta, cfg.delta)
                for i in range(M)]
        out = {}
        for choice in itertools.product(*opts):
            res = self._assemble(choice, tris, ds)
            if res is None:
                continue
            key = tuple(sorted(zip(*res))) if res[0] else ()
            if key in out:
                continue
            mu = self._measure(key)
            f = flat_distance(mu, prev, self.domain)
            if f <= cfg.delta + 1e-12:
                out[key] = f
        if cfg.nucleation:
            occupied = set(int(t) for t in tris)
            for key in list(out):
                if key != tuple(sorted(zip(tris, ds))):
                    continue
                for a in range(self.mesh.n_triangles):
                    if a in occupied:
                        continue
                    for b in self.tree.query_ball_point(self.bary[a], cfg.delta):
                        if b in occupied or b == a:
                            continue
                        new = tuple(sorted(key + ((a, 1), (int(b), -1))))
                        mu = self._measure(new)
                        if flat_distance(mu, prev, self.domain) <= cfg.delta + 1e-12:
                            out[new] = 0.0
        return out

    def _measure(self, key) -> AtomicMeasure:
        if not key:
            return AtomicMeasure.empty()
        t = [k[0] for k in key]
        return AtomicMeasure(self.bary[t], [k[1] for k in key])

    def _triangles_of(self, mu: AtomicMeasure) -> np.ndarray:
        tris = self.mesh.locate(mu.points)
        if np.any(tris < 0):
            raise InadmissibleMeasure("atoms must sit at triangle barycenters")
        if np.any(np.abs(mu.weights) != 1):
            raise InadmissibleMeasure("atoms must carry unit charges")
        if len(np.unique(tris)) != len(tris):
            raise InadmissibleMeasure("two atoms in one triangle")
        return tris

    # the step ---------------------------------------------------------------
    def step(self, prev: AtomicMeasure) -> StepResult:
        cfg = self.cfg
        if prev.is_empty:
            return StepResult(prev, 0.0, 0.0, 0.0, status="empty", n_candidates=1)
        tris = [int(t) for t in self._triangles_of(prev)]
        ds = [int(w) for w in prev.weights]
        xs = self.bary[tris]
        if cfg.mode == "exhaustive":
            cands = self._generate_exhaustive(tris, xs, ds, prev)
        else:
            cands = self._generate_local(tris, xs, ds)
        keys = list(cands)
        stay = tuple(sorted(zip(tris, ds)))
        D = {k: self.dissipation(k, stay) for k in keys}
        tol = 1e-10

        def objective(k):
            return self.energy([a for a, _ in k], [b for _, b in k]) + D[k] / (2 * cfg.tau)

        evaluated = 0
        if cfg.mode == "exhaustive":
            scores = {k: objective(k) for k in keys}
            evaluated = len(keys)
        else:
            tri_set = sorted({a for k in keys for a, _ in k})
            pos = {t: n for n, t in enumerate(tri_set)}
            Mq, sig = self._bound_tables(np.asarray(tri_set, dtype=np.int64))
            lbs = {}
            for k in keys:
                if not k:
                    lbs[k] = D[k] / (2 * cfg.tau)
                    continue
                idx = [pos[a] for a, _ in k]
                d = np.array([b for _, b in k], dtype=float)
                lbs[k] = float(d @ Mq[np.ix_(idx, idx)] @ d - sig[idx].sum()) \
                    + D[k] / (2 * cfg.tau)
            order = sorted(keys, key=lambda k: lbs[k])
            scores = {}
            best = np.inf
            for k in order:
                if lbs[k] > best + tol * max(1.0, abs(best)) + 1e-9:
                    break
                s = objective(k)
                evaluated += 1
                scores[k] = s
                best = min(best, s)
        best = min(scores.values())
        ties = [k for k, s in scores.items() if s <= best + tol * max(1.0, abs(best))]
        if len(ties) > 1:
            ties.sort(key=lambda k: (len(k), self._measure(k).sort_key()))
        choice = ties[0]
        mu = self._measure(choice)
        status = "ok" if len(keys) > 1 else "no-candidates"
        return StepResult(mu, self.energy([a for a, _ in choice], [b for _, b in choice]),
                          D[choice], scores[choice], status=status,
                          n_candidates=len(keys), n_evaluated=evaluated)


def mm_step_discrete(mu_prev: AtomicMeasure, spec: EnergySpec, phi: PolyhedralNorm,
                     cfg: DiscreteFlowConfig) -> AtomicMeasure:
    """One lattice-level minimizing-movement step."""
    return DiscreteStepper(spec, phi, cfg).step(mu_prev).state


def mm_run_discrete(mu0: AtomicMeasure, spec: EnergySpec, phi: PolyhedralNorm,
                    cfg: DiscreteFlowConfig, stepper: DiscreteStepper | None = None,
                    callback=None) -> Trajectory:
    """Iterate :func:`mm_step_discrete` from ``mu0``.

    Stops after ``cfg.max_steps`` steps, when no move is available, or when
    every atom has left.
    """
    st = stepper or DiscreteStepper(spec, phi, cfg)
    e0 = 0.0 if mu0.is_empty else st.energy(st._triangles_of(mu0), mu0.weights)
    traj = Trajectory([0.0], [mu0], [e0], [0.0], kind="measure")
    mu = mu0
    for k in range(1, cfg.max_steps + 1):
        if mu.is_empty:
            traj.stop_reason = "annihilated"
            break
        res = st.step(mu)
        if res.status == "no-candidates":
            traj.stop_reason = "no-candidates"
            break
        mu = res.state
        traj.times.append(k * cfg.tau)
        traj.states.append(mu)
        traj.energies.append(res.energy)
        traj.dissipations.append(res.dissipation)
        if callback is not None:
            callback(k, res)
    else:
        traj.stop_reason = "max-steps"
    if not traj.stop_reason:
        traj.stop_reason = "max-steps"
    return traj


# ---------------------------------------------------------------------------
# renormalized scheme

def _dissipation_positions(phi, dx) -> float:
    return float(np.sum(norm(phi, dx) ** 2))


def renorm_step(x_prev, evaluator: RenormEvaluator, phi: PolyhedralNorm,
                cfg: RenormFlowConfig, grad_prev=None) -> StepResult:
    """Forward-backward minimization of ``W(x) + sum phi^2(x_i - p_i) / (2 tau)``.

    Starting from ``p = x_prev``, each iteration takes a gradient step on
    ``W`` and applies the exact proximal map of the dissipation; the step
    size is found by backtracking on the usual quadratic upper model.  The
    iteration stops once the Fenchel residual of the optimality condition
    ``-grad W(x) in d(phi^2/2)((x - p) / tau)``, summed over atoms, drops
    below ``cfg.tol``.

    ``status`` is ``"constraint-active"`` when the minimizer leaves the
    ``delta``-ball (sum of Euclidean displacements), and
    ``"descent-failed"`` when backtracking is exhausted.
    """
    p = np.atleast_2d(np.asarray(x_prev, dtype=float))
    tau = cfg.tau
    x = p.copy()
    if grad_prev is None:
        E, g = evaluator.energy_and_gradient(x)
    else:
        E, g = grad_prev
    E0 = E
    t = tau
    status = "ok"
    res = np.inf
    it = 0
    for it in range(1, cfg.max_iter + 1):
        res = float(np.sum(fenchel_residual(phi, -g, (x - p) / tau)))
        if res <= cfg.tol:
            break
        for _ in range(60):
            v = x - t * g
            z = p + prox_half_squared(phi, v - p, t / tau)
            if evaluator.admissible(z):
                Ez, gz = evaluator.energy_and_gradient(z)
                dz = z - x
                if Ez <= E + np.sum(g * dz) + np.sum(dz * dz) / (2 * t) + 1e-14 * max(1.0, abs(E)):
                    break
            t *= 0.5
        else:
            status = "descent-failed"
            break
        step = np.abs(z - x).max()
        x, E, g = z, Ez, gz
        t *= 2.0
        if step == 0.0:
            res = float(np.sum(fenchel_residual(phi, -g, (x - p) / tau)))
            break
    else:
        status = "max-iter"
    if status == "ok" and np.sum(np.linalg.norm(x - p, axis=1)) > cfg.delta:
        status = "constraint-active"
    D = _dissipation_positions(phi, x - p)
    if E > E0 + 1e-12 * max(1.0, abs(E0)):
        status = "descent-failed"
    return StepResult(x, E, D, E + D / (2 * tau), status=status, residual=res,
                      iterations=it, gradient=g)


def mm_step_renorm(x_prev, evaluator: RenormEvaluator, phi: PolyhedralNorm,
                   cfg: RenormFlowConfig):
    """One step of the renormalized scheme; returns the new positions."""
    res = renorm_step(x_prev, evaluator, phi, cfg)
    if res.status not in ("ok",):
        raise RuntimeError(f"step failed: {res.status}")
    return res.state


def mm_run_renorm(x0, evaluator: RenormEvaluator, phi: PolyhedralNorm,
                  cfg: RenormFlowConfig, callback=None) -> Trajectory:
    """Iterate the renormalized scheme until the separation drops to ``r``.

    ``info`` records ``k_r`` (the index of the first state with
    ``min_separation <= r``, when reached), ``k_r * tau``, the initial
    separation ``r0`` and the largest per-step Fenchel residual.
    """
    x = np.atleast_2d(np.asarray(x0, dtype=float))
    r0 = min_separation(x, evaluator.domain)
    if not r0 > cfg.r:
        raise ValueError("initial separation must exceed r")
    E, g = evaluator.energy_and_gradient(x)
    traj = Trajectory([0.0], [x.copy()], [E], [0.0], kind="positions",
                      signs=np.asarray(evaluator.signs), gradients=[g], residuals=[0.0])
    traj.info.update(r0=r0, r=cfg.r, tau=cfg.tau, delta=cfg.delta)
    for k in range(1, cfg.max_steps + 1):
        res = renorm_step(x, evaluator, phi, cfg, grad_prev=(E, g))
        if res.status != "ok":
            traj.stop_reason = res.status
            break
        x, E, g = res.state, res.energy, res.gradient
        traj.times.append(k * cfg.tau)
        traj.states.append(x.copy())
        traj.energies.append(E)
        traj.dissipations.append(res.dissipation)
        traj.gradients.append(g)
        traj.residuals.append(res.residual)
        if callback is not None:
            callback(k, res)
        if min_separation(x, evaluator.domain) <= cfg.r:
            traj.stop_reason = "separation"
            traj.info["k_r"] = k
            traj.info["T_r"] = k * cfg.tau
            break
    else:
        traj.stop_reason = "max-steps"
    traj.info["max_residual"] = float(max(traj.residuals))
    traj.info["final_separation"] = min_separation(x, evaluator.domain)
    return traj


def symmetric_dipole_gaps(g0: float, tau: float, steps: int, force: float = 2 / np.pi):
    """Implicit Euler for the gap of a symmetric dipole, ``g_k = g_{k-1} - tau force / g_k``.

    ``force / g`` is the closing speed of the gap.  Returns ``steps + 1``
    values, stopping early (with ``nan``) once no positive root exists.
    """
    out = [float(g0)]
    g = float(g0)
    for _ in range(steps):
        disc = g * g - 4 * tau * force
        if disc < 0:
            out.append(np.nan)
            g = np.nan
            continue
        g = 0.5 * (g + math.sqrt(disc))
        out.append(g)
    return np.asarray(out)


# ---------------------------------------------------------------------------
# interpolation and verification

class PiecewiseAffinePath:
    """Continuous path, affine between consecutive nodes."""

    def __init__(self, times, nodes):
        self.times = np.asarray(times, dtype=float)
        self.nodes = np.asarray(nodes, dtype=float)
        if len(self.times) != len(self.nodes) or len(self.times) < 1:
            raise ValueError("times and nodes must have the same non-zero length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must increase strictly")

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        if np.any(tt < self.times[0] - 1e-12) or np.any(tt > self.times[-1] + 1e-12):
            raise ValueError("time outside the path's interval")
        k = np.clip(np.searchsorted(self.times, tt, side="right") - 1, 0, len(self.times) - 2)
        if len(self.times) == 1:
            out = np.repeat(self.nodes[:1], len(tt), axis=0)
        else:
            t0, t1 = self.times[k], self.times[k + 1]
            w = ((tt - t0) / (t1 - t0)).reshape((-1,) + (1,) * (self.nodes.ndim - 1))
            out = (1 - w) * self.nodes[k] + w * self.nodes[k + 1]
        return out[0] if scalar else out

    def velocities(self) -> np.ndarray:
        """Constant velocity on each interval."""
        dt = np.diff(self.times).reshape((-1,) + (1,) * (self.nodes.ndim - 1))
        return np.diff(self.nodes, axis=0) / dt

    def lipschitz(self) -> float:
        v = self.velocities()
        if len(v) == 0:
            return 0.0
        return float(np.max(np.linalg.norm(v.reshape(len(v), -1), axis=1)))

    def sup_distance(self, other: "PiecewiseAffinePath", t_max: float | None = None) -> float:
        """``max_t max_i |x_i(t) - y_i(t)|`` on the common interval, exact for affine pieces."""
        T = min(self.t_end, other.t_end) if t_max is None else t_max
        ts = np.union1d(self.times, other.times)
        ts = np.union1d(ts[ts <= T], [T])
        diff = self(ts) - other(ts)
        return float(np.max(np.linalg.norm(diff, axis=-1)))


def interpolate(traj: Trajectory) -> PiecewiseAffinePath:
    """Affine interpolation of a position trajectory."""
    return PiecewiseAffinePath(traj.times, traj.positions())


def verify_tau_solution(path: PiecewiseAffinePath, evaluator: RenormEvaluator,
                        phi: PolyhedralNorm, tau: float, gradients=None) -> dict:
    """Check the differential inclusion up to accuracy ``tau``.

    On each affine piece the velocity ``v`` is compared with the faces
    ``dPsi(-grad W(x(s)))`` at the nodes ``s`` lying within ``tau`` of
    every point of the piece; the margin of the piece is the smallest
    Euclidean distance (over all atoms jointly) obtained.  The path passes
    when every margin is at most ``tau``.

    Parameters
    ----------
    gradients : list of (M, 2) arrays, optional
        ``grad W`` at the nodes, recomputed when omitted.
    """
    if gradients is None:
        gradients = [evaluator.gradient(x) for x in path.nodes]
    faces = [[subdifferential(phi, -gi) for gi in g] for g in gradients]
    V = path.velocities()
    margins = []
    for k, v in enumerate(V):
        a, b = path.times[k], path.times[k + 1]
        cand = [j for j, s in enumerate(path.times) if s >= b - tau - 1e-12 and s <= a + tau + 1e-12]
        best = np.inf
        for j in cand:
            d = math.sqrt(sum(f.distance(vi) ** 2 for f, vi in zip(faces[j], v)))
            best = min(best, d)
        margins.append(best)
    margins = np.asarray(margins)
    worst = float(margins.max()) if len(margins) else 0.0
    return {"worst_margin": worst, "passed": bool(worst <= tau), "margins": margins, "tau": tau}


def estimate_gradient_bound(evaluator: RenormEvaluator, configs=(), rho: float | None = None,
                            n_random: int = 0, rng=None) -> float:
    """Largest per-atom ``|grad_i W|`` over the given configurations and random
    configurations of ``K_rho``."""
    best = 0.0
    for x in configs:
        g = evaluator.gradient(x)
        best = max(best, float(np.linalg.norm(g, axis=1).max()))
    if n_random:
        if rho is None:
            raise ValueError("rho is needed for random sampling")
        rng = np.random.default_rng(rng)
        dom = evaluator.domain
        x0, y0, x1, y1 = dom.bbox
        M = len(evaluator.signs)
        got = 0
        tries = 0
        while got < n_random and tries < 1000 * n_random:
            tries += 1
            x = np.column_stack([rng.uniform(x0, x1, M), rng.uniform(y0, y1, M)])
            if not np.all(dom.contains(x, closed=False)) or min_separation(x, dom) < rho:
                continue
            if not evaluator.admissible(x):
                continue
            got += 1
            g = evaluator.gradient(x)
            best = max(best, float(np.linalg.norm(g, axis=1).max()))
    return best


# ---------------------------------------------------------------------------
# studies

def inclusion_limit_study(x0, evaluator: RenormEvaluator, phi: PolyhedralNorm, r: float,
                          tau_list, delta: float | None = None, max_steps: int = 100_000) -> dict:
    """Refinement study of the renormalized scheme as ``tau -> 0``.

    Returns per-``tau`` stop data, sup distances between consecutive
    interpolants with observed orders, and the lower bound
    ``(r0 - r) / (2 C_phi M)`` for ``k_r tau`` with ``M`` the largest
    per-atom gradient met along all runs.
    """
    taus = [float(t) for t in tau_list]
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise ValueError("tau_list must decrease")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    r0 = min_separation(x0, evaluator.domain)
    if delta is None:
        delta = min(r / 4, (r0 - r) / 4)
    runs = []
    for tau in taus:
        cfg = RenormFlowConfig(tau=tau, delta=delta, r=r, max_steps=max_steps)
        tr = mm_run_renorm(x0, evaluator, phi, cfg)
        runs.append(tr)
    paths = [interpolate(t) for t in runs]
    dists = [paths[j].sup_distance(paths[j + 1]) for j in range(len(paths) - 1)]
    orders = [math.log(dists[j] / dists[j + 1]) / math.log(taus[j] / taus[j + 1])
              if dists[j + 1] > 0 and dists[j] > 0 else np.nan for j in range(len(dists) - 1)]
    M = max(float(np.linalg.norm(g, axis=1).max()) for t in runs for g in t.gradients)
    bound = (r0 - r) / (2 * phi.dual_bound * M) if M > 0 else np.inf
    rows = []
    for tau, tr in zip(taus, runs):
        rows.append({
            "tau": tau,
            "steps": tr.n_steps,
            "stop_reason": tr.stop_reason,
            "k_r": tr.info.get("k_r"),
            "k_r_tau": tr.info.get("T_r"),
            "final_separation": tr.info["final_separation"],
            "max_residual": tr.info["max_residual"],
        })
    return {"r0": r0, "r": r, "delta": delta, "runs": rows, "sup_distances": dists,
            "orders": orders, "gradient_bound": M, "k_r_tau_lower_bound": bound,
            "trajectories": runs}


def _nearest_barycenter_measure(mesh, x, d) -> AtomicMeasure:
    tri = mesh.nearest_triangle(np.atleast_2d(x))
    return AtomicMeasure(mesh.barycenters[tri], d)


def epsilon_limit_study(x0, d0, omega: Domain, phi: PolyhedralNorm, tau: float, r: float,
                        delta: float, epsilons, lattice: LatticeSpec | None = None,
                        Q=None, h: float = 1 / 64, max_steps: int | None = None,
                        inject_dipole=None, allow_ill_prepared: bool = False,
                        spurious_radius: float | None = None) -> dict:
    """Compare lattice-level runs with the renormalized run as ``eps`` decreases.

    Initial lattice data put each charge at the barycenter of the triangle
    nearest to ``x0_i``; they are checked to be free of spurious dipoles.
    ``inject_dipole=(p, q)`` adds a tight +/- pair at the triangles nearest
    to ``p`` and ``q``, which makes the data ill-prepared; such data are
    rejected unless ``allow_ill_prepared`` is set.

    For each step ``k`` up to the renormalized stopping index the report
    lists, per ``eps``: the flat distance to ``mu_k = sum d_i delta_{x_i^k}``;
    the spurious-dipole mass ``|mu_eps^k|(Omega) - |mu_k|(Omega)``, i.e. the
    number of atoms in excess of the limit; the mass of atoms farther than
    ``spurious_radius`` (default ``r``) from ``supp mu_k``; and the gap
    between the lattice dissipation and ``sum phi^2(dx_i)``.
    """
    lattice = lattice or LatticeSpec.square()
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    d0 = np.asarray(d0, dtype=int)
    ev = RenormEvaluator(omega, h, Q, d0)
    rcfg = RenormFlowConfig(tau=tau, delta=delta, r=r,
                            max_steps=max_steps if max_steps is not None else 100_000)
    ren = mm_run_renorm(x0, ev, phi, rcfg)
    K = ren.n_steps if max_steps is None else min(ren.n_steps, max_steps)
    rad = spurious_radius if spurious_radius is not None else r
    limits = [AtomicMeasure(x, d0) for x in ren.states]
    table = []
    for eps in epsilons:
        mesh = make_mesh(omega, eps, lattice)
        spec = EnergySpec.nearest_neighbour(mesh)
        mu0 = _nearest_barycenter_measure(mesh, x0, d0)
        if inject_dipole is not None:
            mu0 = mu0 + _nearest_barycenter_measure(mesh, np.asarray(inject_dipole), [1, -1])
        spurious0 = mu0.total_variation - limits[0].total_variation \
            + detect_spurious_dipoles(mu0, limits[0], rad).total_variation
        if spurious0 > 0 and not allow_ill_prepared:
            raise ValueError("ill-prepared initial data: spurious dipoles present")
        F0, _ = min_energy_given_mu(mu0, spec, check=False)
        if not np.isfinite(F0):
            raise ValueError("initial lattice measure carries no finite-energy field")
        cfg = DiscreteFlowConfig(epsilon=eps, tau=tau, delta=delta, max_steps=K)
        tr = mm_run_discrete(mu0, spec, phi, cfg)
        rows = []
        for k in range(min(K, tr.n_steps) + 1):
            mu_k = tr.states[k]
            flat = flat_distance(mu_k, limits[k], omega)
            spur = mu_k.total_variation - limits[k].total_variation
            far = detect_spurious_dipoles(mu_k, limits[k], rad).total_variation \
                if not limits[k].is_empty else mu_k.total_variation
            gap = None
            if k > 0:
                dren = _dissipation_positions(phi, ren.states[k] - ren.states[k - 1])
                gap = abs(tr.dissipations[k] - dren)
            rows.append({"k": k, "flat": flat, "spurious_mass": spur, "far_mass": far,
                         "dissipation_gap": gap,
                         "energy": tr.energies[k], "atoms": len(mu_k)})
        table.append({"epsilon": eps, "initial_spurious_mass": spurious0,
                      "stop_reason": tr.stop_reason, "steps": rows, "trajectory": tr})
    return {"renormalized": ren, "k_r": ren.info.get("k_r"), "steps_compared": K,
            "table": table}
