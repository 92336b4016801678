"""Intensity-only forward model y0 = |A s|^2 with a random sensing matrix.

The sensing matrix A is a fixed M x K complex matrix with i.i.d. circular
Gaussian entries of total per-entry variance ``variance`` (real and
imaginary parts each N(0, variance/2)).  It is never serialized:
experiments record (m, k, variance, seed) and regenerate it bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from genmala.exceptions import ConfigurationError
from genmala.operators import DifferentiableOp


@dataclass(frozen=True)
class SensingMatrix:
    """Dense M x K complex sensing matrix plus its generation parameters."""

    entries: np.ndarray
    m: int
    k: int
    seed: int
    variance: float


def make_sensing_matrix(m: int, k: int, variance: float, seed: int) -> SensingMatrix:
    """Generate the i.i.d. circular complex Gaussian sensing matrix.

    Deterministic in (m, k, variance, seed): the same arguments always
    reproduce bit-identical entries.
    """
    if m < 1 or k < 1:
        raise ConfigurationError(f"sensing matrix dims must be positive, got {m}x{k}")
    if variance <= 0:
        raise ConfigurationError(f"sensing matrix variance must be positive, got {variance}")
    rng = np.random.default_rng(seed)
    scale = np.sqrt(variance / 2.0)
    re = rng.standard_normal((m, k))
    im = rng.standard_normal((m, k))
    entries = scale * (re + 1j * im)
    return SensingMatrix(entries=entries, m=m, k=k, seed=seed, variance=variance)


def pr_forward(a: SensingMatrix, s: np.ndarray) -> np.ndarray:
    """Noise-free intensities |A s|^2, entrywise non-negative."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (a.k,):
        raise ConfigurationError(
            f"image length {s.shape} does not match sensing matrix K={a.k}"
        )
    field = a.entries @ s
    return np.abs(field) ** 2


def pr_vjp(a: SensingMatrix, s: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Adjoint action J^T r for the intensity map.

    With y_m = |(As)_m|^2 the Jacobian entry is J_mk = 2 Re(conj((As)_m) A_mk),
    so J^T r = 2 Re(A^H diag(As) r) for real cotangents r.
    """
    s = np.asarray(s, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if s.shape != (a.k,):
        raise ConfigurationError(
            f"image length {s.shape} does not match sensing matrix K={a.k}"
        )
    if r.shape != (a.m,):
        raise ConfigurationError(
            f"cotangent length {r.shape} does not match sensing matrix M={a.m}"
        )
    field = a.entries @ s
    return 2.0 * np.real(a.entries.conj().T @ (field * r))


def pr_operator(a: SensingMatrix) -> DifferentiableOp:
    """Wrap a sensing matrix as the DifferentiableOp s -> |A s|^2."""
    return DifferentiableOp(
        in_dim=a.k,
        out_dim=a.m,
        out_kind="real",
        forward=lambda s: pr_forward(a, s),
        vjp=lambda s, r: pr_vjp(a, s, r),
    )
