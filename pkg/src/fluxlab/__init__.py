"""Quasi-adiabatic flux threading and Hall conductance diagnostics on small lattice models."""

__version__ = "0.1.0"
