"""Finite sums of weighted Dirac masses with integer weights."""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

__all__ = ["AtomicMeasure"]


class AtomicMeasure:
    """An atomic measure ``sum_i d_i delta_{x_i}`` with integer weights.

    Coincident points are merged and zero weights dropped, so the stored
    points are pairwise distinct.  Atoms are kept in lexicographic order of
    their coordinates, which makes equality and iteration deterministic.

    Parameters
    ----------
    points : (n, 2) array_like
    weights : (n,) array_like of int
    merge_tol : float
        Points closer than this (in max-norm) are treated as the same atom.
    """

    __slots__ = ("points", "weights")

    def __init__(self, points: Iterable = (), weights: Iterable = (), merge_tol: float = 1e-12):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        w = np.asarray(weights).reshape(-1)
        if len(pts) != len(w):
            raise ValueError("points and weights differ in length")
        if w.size and not np.all(np.asarray(w) == np.round(w)):
            raise ValueError("weights must be integers")
        w = np.round(w).astype(np.int64)
        if len(pts):
            order = np.lexsort((pts[:, 1], pts[:, 0]))
            pts, w = pts[order], w[order]
            # after sorting, coincident atoms are adjacent
            gap = np.abs(np.diff(pts, axis=0)).max(axis=1) > merge_tol
            group = np.concatenate([[0], np.cumsum(gap)])
            first = np.concatenate([[True], gap])
            w = np.bincount(group, weights=w).round().astype(np.int64)
            pts = pts[first]
            nz = w != 0
            pts, w = pts[nz], w[nz]
        pts = np.ascontiguousarray(pts, dtype=float)
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __setattr__(self, name, value):
        raise AttributeError("AtomicMeasure is immutable")

    # construction -------------------------------------------------------
    @classmethod
    def empty(cls) -> "AtomicMeasure":
        return cls()

    @classmethod
    def dirac(cls, point, weight: int = 1) -> "AtomicMeasure":
        return cls([point], [weight])

    @classmethod
    def from_json(cls, data) -> "AtomicMeasure":
        """Accepts ``{"atoms": [[x, y], ...], "weights": [...]}`` or a list of ``[x, y, d]``."""
        if isinstance(data, dict):
            return cls(data.get("atoms", []), data.get("weights", []))
        rows = list(data)
        return cls([r[:2] for r in rows], [r[2] for r in rows])

    def to_json(self) -> dict:
        return {"atoms": self.points.tolist(), "weights": self.weights.tolist()}

    # basic views --------------------------------------------------------
    def __len__(self) -> int:
        return len(self.weights)

    def __iter__(self) -> Iterator[tuple[np.ndarray, int]]:
        return iter(zip(self.points, self.weights.tolist()))

    def __bool__(self) -> bool:
        return len(self.weights) > 0

    @property
    def is_empty(self) -> bool:
        return len(self.weights) == 0

    @property
    def total_variation(self) -> int:
        return int(np.abs(self.weights).sum())

    @property
    def total_mass(self) -> int:
        return int(self.weights.sum())

    def positive(self) -> "AtomicMeasure":
        m = self.weights > 0
        return AtomicMeasure(self.points[m], self.weights[m])

    def negative(self) -> "AtomicMeasure":
        """The negative part as a positive measure."""
        m = self.weights < 0
        return AtomicMeasure(self.points[m], -self.weights[m])

    def abs(self) -> "AtomicMeasure":
        return AtomicMeasure(self.points, np.abs(self.weights))

    def expanded(self) -> np.ndarray:
        """Points repeated according to ``|weight|``."""
        return np.repeat(self.points, np.abs(self.weights), axis=0)

    def restrict(self, mask) -> "AtomicMeasure":
        mask = np.asarray(mask, dtype=bool)
        return AtomicMeasure(self.points[mask], self.weights[mask])

    def translated(self, shift) -> "AtomicMeasure":
        return AtomicMeasure(self.points + np.asarray(shift, dtype=float), self.weights)

    def mapped(self, A) -> "AtomicMeasure":
        """Push-forward under the linear map ``x -> A x``."""
        return AtomicMeasure(self.points @ np.asarray(A, dtype=float).T, self.weights)

    def sort_key(self) -> tuple:
        return tuple((float(p[0]), float(p[1]), int(d)) for p, d in self)

    # arithmetic ---------------------------------------------------------
    def __add__(self, other: "AtomicMeasure") -> "AtomicMeasure":
        return AtomicMeasure(np.concatenate([self.points, other.points]),
                             np.concatenate([self.weights, other.weights]))

    def __neg__(self) -> "AtomicMeasure":
        return AtomicMeasure(self.points, -self.weights)

    def __sub__(self, other: "AtomicMeasure") -> "AtomicMeasure":
        return self + (-other)

    def __mul__(self, k: int) -> "AtomicMeasure":
        return AtomicMeasure(self.points, int(k) * self.weights)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, AtomicMeasure):
            return NotImplemented
        return (len(self) == len(other)
                and np.array_equal(self.weights, other.weights)
                and np.allclose(self.points, other.points, rtol=0.0, atol=1e-12))

    def __hash__(self):
        return hash(tuple(np.round(self.points, 10).ravel().tolist()) + tuple(self.weights.tolist()))

    def __repr__(self) -> str:
        body = ", ".join(f"{d:+d}@({p[0]:.6g}, {p[1]:.6g})" for p, d in self)
        return f"AtomicMeasure([{body}])"
