"""Porous medium equation and parabolic obstacle problems on uniform grids."""

__version__ = "0.1.0"
