"""WGAN-GP training for disc and MNIST generative priors.

Trains generator/critic pairs with the gradient-penalty Wasserstein
objective and exports the generator (with frozen batch-norm statistics)
in the portable AGDP weight format consumed by the reconstruction engine.
"""

__version__ = "0.1.0"
