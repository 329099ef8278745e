"""Spectral Galerkin vorticity dynamics and their chaos-expansion generator."""

__version__ = "0.1.0"
