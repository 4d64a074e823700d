"""Sketch-driven facial identity editing for video."""

__version__ = "0.1.0"
