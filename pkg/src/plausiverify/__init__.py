"""Plausibility verification of 3D object-detection hypotheses.

A detector proposal ("there is a car in this box") is scored by a composite
energy built from four priors: point-cloud alignment against a TSDF shape
manifold, silhouette agreement with an instance mask, height over the
estimated ground plane, and rotation consistency with the ground normal.
Low energy after a two-step optimization means the hypothesis is plausible.
"""

from .kernels import backend_name

__version__ = "0.1.0"

__all__ = ["__version__", "backend_name"]
