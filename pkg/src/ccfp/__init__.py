"""Convex collision-free multi-frame planning."""

__version__ = "0.1.0"
