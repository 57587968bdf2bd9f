"""Reduction of Wiener path integrals on manifolds with a compact group action."""

__version__ = "0.1.0"
