"""Minimum-cost perfect assignment on a square cost matrix."""

from __future__ import annotations

import itertools

import numpy as np

__all__ = ["solve_assignment", "brute_force_assignment"]


def solve_assignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact minimum-cost assignment by shortest augmenting paths.

    Rows are inserted one at a time; each insertion runs a Dijkstra-like
    search on reduced costs maintained through dual potentials ``u, v``.
    Runs in ``O(n^3)``.

    Parameters
    ----------
    cost : (n, n) array
        Finite costs.  Large sentinels can encode forbidden pairs.

    Returns
    -------
    col_of_row : (n,) int array
    total : float
    """
    C = np.asarray(cost, dtype=float)
    n = C.shape[0]
    if C.shape != (n, n):
        raise ValueError("cost matrix must be square")
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    if not np.all(np.isfinite(C)):
        raise ValueError("costs must be finite")
    INF = np.inf
    # 1-based arrays with a virtual column 0, as in the classical formulation
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)     # p[j]: row matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = C[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            idx = np.nonzero(better)[0] + 1
            minv[idx] = cur[idx - 1]
            way[idx] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            used_idx = np.nonzero(used)[0]
            u[p[used_idx]] += delta
            v[used_idx] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    total = float(C[np.arange(n), col_of_row].sum())
    return col_of_row, total


def brute_force_assignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Enumerate all permutations (test oracle, ``n <= 9``)."""
    C = np.asarray(cost, dtype=float)
    n = C.shape[0]
    best, best_perm = np.inf, None
    rows = np.arange(n)
    for perm in itertools.permutations(range(n)):
        c = C[rows, perm].sum()
        if c < best:
            best, best_perm = c, perm
    return np.asarray(best_perm if best_perm is not None else [], dtype=np.int64), float(best)
