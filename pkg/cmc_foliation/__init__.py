"""Epstein surfaces, CMC conformal-factor continuation and foliation checks in hyperbolic 3-space."""

__version__ = "0.1.0"
