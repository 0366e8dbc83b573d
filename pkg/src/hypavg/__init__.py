"""Eigenfunction averages over hypersurfaces on the flat torus and round sphere."""

__version__ = "0.1.0"
