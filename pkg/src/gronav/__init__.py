"""Terrain-grounded navigation: proprioceptive traversability, in-context estimation and planning."""

__version__ = "0.1.0"
