"""Desk-scale NWP dwarfs: spectral transforms, elliptic solver, cloud microphysics and semi-Lagrangian advection."""

__version__ = "0.1.0"
