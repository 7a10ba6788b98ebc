"""Generational ant colony learning alongside a minimal SGD-trained network."""

__version__ = "0.1.0"
