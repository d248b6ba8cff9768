"""Finsler p-Laplace perfect-conductivity laboratory for two close Wulff inclusions."""

__version__ = "0.1.0"
