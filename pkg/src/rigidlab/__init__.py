"""Numerical laboratory for honest codimension-2 deformations of rank-3 Euclidean hypersurfaces."""

__version__ = "0.1.0"
