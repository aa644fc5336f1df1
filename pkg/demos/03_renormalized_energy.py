"""
Renormalized energy on a polygon
================================

The renormalized energy collects the pairwise logarithmic interaction of
the dislocations and a harmonic boundary correction, computed here with
piecewise linear finite elements.  In a disk it is known in closed form
through image charges, which gives a direct check.
"""

import numpy as np

from dislo import images
from dislo.atoms import AtomicMeasure
from dislo.geometry import Domain
from dislo.renormalized import AnisotropyQ, RenormEvaluator, renorm_energy_iso

disk = Domain.regular_polygon(512)
h = 1 / 64

for a in (0.0, 0.25, 0.5, 0.7):
    W = renorm_energy_iso(AtomicMeasure.dirac([a, 0.0]), disk, h).calW
    print(f"|a| = {a:.2f}  W = {W:+.5f}  closed form {images.disk_single_atom_energy(a):+.5f}")

# %%
# A dipole: the energy and its gradient, the force being -grad W.
ev = RenormEvaluator(disk, h, signs=[1, -1])
x = np.array([[0.3, 0.0], [-0.3, 0.0]])
E, g = ev.energy_and_gradient(x)
print("dipole energy", E)
print("forces", -g)

# %%
# An anisotropic medium: Q stretches the domain and rescales the energy.
Q = AnisotropyQ(np.array([[2.0, 0.3], [0.3, 1.0]]))
aniso = RenormEvaluator(Domain.unit_square(), 1 / 32, Q, signs=[1, -1])
print("anisotropic dipole energy", aniso.energy([[0.35, 0.5], [0.65, 0.5]]))
