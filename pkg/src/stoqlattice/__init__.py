"""Stoquastic clock Hamiltonians, gadgets and lattice embedding."""

__version__ = "0.1.0"
