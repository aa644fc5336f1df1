"""Screw dislocations on lattices: discrete energies, crystalline dissipations,
minimizing movements and the renormalized energy."""

__version__ = "0.1.0"
