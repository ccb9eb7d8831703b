"""Eddy-current testing finite-element solver (A-V formulation, P1 tetrahedra)."""

__version__ = "0.1.0"
