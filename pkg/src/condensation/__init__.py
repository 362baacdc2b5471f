"""Boundary-layer solutions of -Delta u + u = lambda e^u with Neumann conditions."""

__version__ = "0.1.0"
