"""Tube-based robust lattice motion planning for fully actuated Euler-Lagrange vessels."""

__version__ = "0.1.0"
