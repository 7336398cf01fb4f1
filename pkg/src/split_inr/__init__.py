"""Coordinate networks with Hadamard-product split-layers."""

__version__ = "0.1.0"
