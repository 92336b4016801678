"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigurationError -> 2,
NumericalError -> 3, I/O and model-file problems -> 4.
"""


class GenmalaError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GenmalaError):
    """Invalid parameters, dimension mismatches, bad configs."""


class NumericalError(GenmalaError):
    """Non-finite values or numerically invalid intermediate states."""


class ModelLoadError(GenmalaError):
    """Weight-file problems: bad magic, version, checksum or shape chain."""


class InitializationError(GenmalaError):
    """Latent initialization failed (all restarts diverged)."""


class DivergenceError(NumericalError):
    """An iterative solver diverged (objective increased persistently)."""
