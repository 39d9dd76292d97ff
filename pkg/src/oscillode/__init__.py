"""Learned slow-fast decompositions and uniformly accurate integrators for highly oscillatory ODEs."""

__version__ = "0.1.0"
