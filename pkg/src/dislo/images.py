"""Closed-form renormalized energies in a disk by the method of images.

Kept independent of the finite element path so it can serve as a test
oracle.  Conventions match :mod:`dislo.renormalized`:

    calW(nu) = -pi sum_{i != j} d_i d_j log|y_i - y_j| - pi sum_i d_i R(y_i),

with ``R`` harmonic in the disk and equal to ``-sum_j d_j log|y - y_j|`` on
its boundary.
"""

from __future__ import annotations

import numpy as np

__all__ = ["disk_regular_part", "disk_energy", "disk_single_atom_energy", "disk_dipole_energy"]


def _image(z: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    v = z - center
    return center + radius ** 2 * v / np.dot(v, v)


def disk_regular_part(y, atoms, weights, center=(0.0, 0.0), radius: float = 1.0) -> np.ndarray:
    """Harmonic extension ``R(y)`` of ``-sum d_j log|. - y_j|`` from the circle.

    For one charge at ``z`` the extension is
    ``-log(|z - c| |y - z*| / rho)`` with the inverse point
    ``z* = c + rho^2 (z - c) / |z - c|^2``; a charge at the centre gives the
    constant ``-log(rho)``.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    c = np.asarray(center, dtype=float)
    out = np.zeros(len(y))
    for z, d in zip(np.atleast_2d(np.asarray(atoms, dtype=float)), np.asarray(weights)):
        r = np.linalg.norm(z - c)
        if r == 0:
            out += -d * np.log(radius)
            continue
        zs = _image(z, c, radius)
        out += -d * (np.log(r / radius) + np.log(np.linalg.norm(y - zs, axis=1)))
    return out


def disk_energy(atoms, weights, center=(0.0, 0.0), radius: float = 1.0) -> float:
    """``calW`` of an atomic measure in the disk ``B_radius(center)``."""
    y = np.atleast_2d(np.asarray(atoms, dtype=float))
    d = np.asarray(weights, dtype=float)
    pair = 0.0
    for i in range(len(y)):
        for j in range(len(y)):
            if i != j:
                pair += d[i] * d[j] * np.log(np.linalg.norm(y[i] - y[j]))
    R = disk_regular_part(y, y, d, center, radius)
    return float(-np.pi * pair - np.pi * np.dot(d, R))


def disk_single_atom_energy(a: float) -> float:
    """``calW(delta_a) = pi log(1 - |a|^2)`` in the unit disk."""
    return float(np.pi * np.log(1.0 - a * a))


def disk_dipole_energy(t: float) -> float:
    """``calW(delta_(t,0) - delta_(-t,0))`` in the unit disk."""
    a = np.array([t, 0.0])
    R = lambda y: disk_regular_part(y, [a, -a], [1, -1])[0]
    return float(2 * np.pi * np.log(2 * t) - np.pi * (R(a) - R(-a)))
