"""Homogenized tensors of random convolution energies, computed on lattices."""

__version__ = "0.1.0"
