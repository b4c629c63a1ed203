"""Numerical workbench for rough differential equations driven by fractional
Brownian motion with 1/3 < H < 1/2."""

__version__ = "0.1.0"
