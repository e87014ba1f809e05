"""Numerical lab for compressible Navier-Stokes with density-dependent
viscosity, its multifluid homogenized limit, and oscillation studies."""

__version__ = "0.1.0"
