"""Spectral graph reasoning for hyperspectral pixel classification."""

__version__ = "0.1.0"
