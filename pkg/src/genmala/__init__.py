"""Bayesian image reconstruction for nonlinear imaging models.

Reconstructs images from nonlinear measurements (intensity-only phase
retrieval, multi-angle beam-propagation tomography) by sampling the
posterior over the latent space of a trained generative model with the
Metropolis-adjusted Langevin algorithm.  Variational TV/Tikhonov solvers
are included as baselines, and a small CLI drives simulation and
reconstruction experiments from JSON configs.
"""

from genmala.operators import DifferentiableOp, compose, adjoint_check
from genmala.exceptions import (
    ConfigurationError,
    NumericalError,
    ModelLoadError,
    InitializationError,
    DivergenceError,
)

__version__ = "0.1.0"

__all__ = [
    "DifferentiableOp",
    "compose",
    "adjoint_check",
    "ConfigurationError",
    "NumericalError",
    "ModelLoadError",
    "InitializationError",
    "DivergenceError",
    "__version__",
]
