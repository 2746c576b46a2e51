"""Robust outlier detection in multidimensional data cubes."""

__version__ = "0.1.0"
