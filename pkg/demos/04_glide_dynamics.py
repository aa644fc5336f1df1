"""
Glide under a crystalline dissipation
=====================================

Minimizing movements for the renormalized energy with an l1 dissipation:
each step balances the energy decrease against the squared l1 length of
the displacements, so every dislocation moves along a coordinate axis.
The run stops when two dislocations, or a dislocation and the boundary,
come within distance r.
"""

from pathlib import Path

import numpy as np

from dislo import io
from dislo.crystalline import PolyhedralNorm
from dislo.dynamics import RenormFlowConfig, interpolate, mm_run_renorm, verify_tau_solution
from dislo.geometry import Domain
from dislo.renormalized import RenormEvaluator

omega = Domain.unit_square()
l1 = PolyhedralNorm.l1()
ev = RenormEvaluator(omega, 1 / 32, signs=[1, -1, 1])
x0 = np.array([[0.3, 0.35], [0.62, 0.41], [0.45, 0.7]])

cfg = RenormFlowConfig(tau=0.002, delta=0.04, r=0.1)
traj = mm_run_renorm(x0, ev, l1, cfg)
print(f"{traj.n_steps} steps, stopped by {traj.stop_reason}")

# %%
# Each displacement has a zero component.
dx = np.diff(traj.positions(), axis=0)
print("largest off-axis component:", np.abs(dx).min(axis=2).max())

# %%
# The interpolated path solves the differential inclusion up to tau.
check = verify_tau_solution(interpolate(traj), ev, l1, cfg.tau, traj.gradients)
print(f"worst margin {check['worst_margin']:.2e} (tau = {cfg.tau})")

out = Path("demo_output")
io.write_svg(out / "glide.svg", omega, traj.states, traj.signs)
io.write_trajectory_csv(out / "glide.csv", traj)
print("wrote", out / "glide.svg")
