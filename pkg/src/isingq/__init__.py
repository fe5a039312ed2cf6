"""Lattice fermions as a classical statistical ensemble of Ising spins.

Submodules: :mod:`grassmann` (exact Grassmann algebra), :mod:`lattice`
(spinor algebra, generator, transfer map), :mod:`ensemble` (probabilities,
signs, orthogonal evolution), :mod:`sectors` (particle sectors, observables),
:mod:`dirac` (one-particle Dirac/Schroedinger solvers and demos) and
:mod:`cli`.
"""

__version__ = "0.1.0"
