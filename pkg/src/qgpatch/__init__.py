"""qgpatch package initialization."""
__version__ = "0.1.0"
# This package computes the spectral objects behind bifurcation of doubly connected
# rotating patches in the 3D quasi-geostrophic model.
