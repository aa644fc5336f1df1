"""
Dissipation between atomic measures
===================================

The cost of moving one atomic measure to another pairs atoms of equal
sign, lets unpaired atoms leave through the boundary, and charges the
squared crystalline norm of each displacement.  A small dipole placed
halfway along a path can cut the cost, so the dissipation is not
continuous under flat convergence.
"""

import numpy as np

from dislo.atoms import AtomicMeasure
from dislo.crystalline import PolyhedralNorm
from dislo.geometry import Domain
from dislo.measures import dissipation, flat_distance

big = Domain.box(100.0)
euclid = PolyhedralNorm.euclidean_norm()

mu = AtomicMeasure.dirac([0.0, 0.0])
nu = AtomicMeasure.dirac([1.0, 0.0])
print("direct move:", dissipation(mu, nu, big, euclid))

# %%
# Insert a shrinking +/- pair at the midpoint.  The flat distance to nu
# vanishes, but the dissipation converges to 1/2 instead of 1.
for n in (4, 8, 16, 32, 64):
    dip = AtomicMeasure([[0.5 - 1 / n, 0.0], [0.5 + 1 / n, 0.0]], [1, -1])
    nun = nu + dip
    print(f"n = {n:3d}  D = {dissipation(mu, nun, big, euclid):.5f}"
          f"  flat(nu_n, nu) = {flat_distance(nun, nu, big):.5f}")

# %%
# Crystalline norms change the cost of diagonal moves.
diag = AtomicMeasure.dirac([0.3, 0.3])
for name in ("euclid", "l1", "hex"):
    phi = PolyhedralNorm.from_json(name)
    print(f"{name:6s}", dissipation(mu, diag, big, phi))
