"""Padé absorbing boundary conditions, FEM/PML solvers and ray diagnostics for 2D Helmholtz scattering."""

__version__ = "0.1.0"
