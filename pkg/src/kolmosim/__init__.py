"""Spectral Galerkin solver and estimate laboratory for a two-equation
turbulence closure (eddy frequency / mean turbulent energy) on the
periodic torus."""

__version__ = "0.1.0"
