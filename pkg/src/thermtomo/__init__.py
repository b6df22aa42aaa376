"""Polynomial surrogates and least-squares inversion for transient thermal
tomography on a domain with uncertain exterior boundary.

The offline phase builds an adaptive sparse pseudospectral (Smolyak) surrogate
of the map from physical parameters (conductivity, capacity, surface
conductance, boundary shape) to boundary temperature measurements.  The online
phase reconstructs those parameters from measured data by regularized
nonlinear least squares over the surrogate.
"""

from thermtomo import config, forward, geometry, inversion, polybasis, presets, sparsegrid

__all__ = [
    "config",
    "forward",
    "geometry",
    "inversion",
    "polybasis",
    "presets",
    "sparsegrid",
]
__version__ = "0.1.0"
