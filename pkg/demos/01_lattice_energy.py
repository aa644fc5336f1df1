"""
Lattice energy of a single screw dislocation
============================================

A dislocation sits in one triangle of the lattice, detected by the
circulation of the plastic strain.  Carrying it costs an energy that grows
like |log eps| / (2 pi) as the lattice spacing shrinks, and every defected
triangle pays at least the quantization constant c0.
"""

import numpy as np

from dislo.atoms import AtomicMeasure
from dislo.discrete import (EnergySpec, dislocation_measure, min_energy_given_mu,
                            quantization_constant)
from dislo.geometry import Domain
from dislo.lattice import make_mesh

omega = Domain.unit_square()

# the smallest energy a single defected triangle can carry
print("c0 (axis bonds only):", quantization_constant((1.0, 1.0, 0.0)))
print("c0 (three unit bonds):", quantization_constant((1.0, 1.0, 1.0)))

# %%
# One dislocation near the centre, on finer and finer lattices.
rows = []
for k in range(3, 7):
    eps = 2.0 ** -k
    mesh = make_mesh(omega, eps)
    spec = EnergySpec.nearest_neighbour(mesh)
    T = mesh.nearest_triangle([[0.5, 0.5]])
    mu = AtomicMeasure(mesh.barycenters[T], [1])
    F, u = min_energy_given_mu(mu, spec)
    # the optimal field carries exactly the prescribed measure
    assert dislocation_measure(u, mesh) == mu
    rows.append((eps, mesh.n_triangles, F))
    print(f"eps = 1/{2 ** k:<3d} triangles = {mesh.n_triangles:5d}  F = {F:.5f}")

# %%
# The growth rate against |log eps|.
x = -np.log([r[0] for r in rows])
y = [r[2] for r in rows]
slope, intercept = np.polyfit(x, y, 1)
print(f"fitted slope {slope:.4f}, expected {1 / (2 * np.pi):.4f}")
