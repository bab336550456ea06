"""Particle approximation of mean-field control problems on Wasserstein space."""

__version__ = "0.1.0"
