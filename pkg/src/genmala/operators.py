"""Differentiable-operator contract: forward maps with hand-derived adjoints.

Every forward model in this package (the sensing matrix of phase
retrieval, the beam-propagation model, the generator networks) is exposed
as a :class:`DifferentiableOp`: a map from a real vector to a real or
complex vector together with the action of the conjugate-transposed
Jacobian on a cotangent, ``vjp(x, r) = Re(J(x)^H r)``.  Complex outputs
are paired with the real inner product ``<a, b> = Re(a^H b)``, which makes
``vjp`` exactly the gradient contribution needed by gradient-based
samplers without any Wirtinger bookkeeping in the public contract.

All numerics are float64.  Operators are immutable after construction and
safe to evaluate concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from genmala.exceptions import ConfigurationError, NumericalError

# Central-difference step on unit-scaled inputs: balances truncation and
# rounding error in double precision.
FD_STEP = 1e-6


def real_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Real inner product; on complex vectors this is Re(a^H b)."""
    return float(np.real(np.vdot(a, b)))


@dataclass(frozen=True)
class DifferentiableOp:
    """A deterministic map R^in_dim -> (R|C)^out_dim with its VJP.

    Attributes:
        in_dim: input length (inputs are always real vectors).
        out_dim: output length.
        out_kind: "real" or "complex".
        forward: x -> y, where y has dtype float64 or complex128.
        vjp: (x, r) -> Re(J(x)^H r), a real vector of length in_dim.
        jvp: optional exact Jacobian action (x, v) -> J(x) v; when present,
            adjoint_check uses it instead of the finite-difference probe.
        sample_domain: optional seeded draw of an in-domain point, used by
            adjoint_check; defaults to a standard normal draw.
    """

    in_dim: int
    out_dim: int
    out_kind: str
    forward: Callable[[np.ndarray], np.ndarray]
    vjp: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jvp: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = field(
        default=None, compare=False
    )
    sample_domain: Optional[Callable[[np.random.Generator], np.ndarray]] = field(
        default=None, compare=False
    )

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigurationError(
                f"operator dims must be positive, got {self.in_dim}->{self.out_dim}"
            )
        if self.out_kind not in ("real", "complex"):
            raise ConfigurationError(f"unknown out_kind {self.out_kind!r}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def draw_point(self, rng: np.random.Generator) -> np.ndarray:
        if self.sample_domain is not None:
            return np.asarray(self.sample_domain(rng), dtype=np.float64)
        return rng.standard_normal(self.in_dim)

    def draw_cotangent(self, rng: np.random.Generator) -> np.ndarray:
        r = rng.standard_normal(self.out_dim)
        if self.out_kind == "complex":
            r = r + 1j * rng.standard_normal(self.out_dim)
        return r


def identity_op(n: int) -> DifferentiableOp:
    """The identity map on R^n."""
    return DifferentiableOp(
        in_dim=n,
        out_dim=n,
        out_kind="real",
        forward=lambda x: np.asarray(x, dtype=np.float64).copy(),
        vjp=lambda x, r: np.asarray(r, dtype=np.float64).copy(),
        jvp=lambda x, v: np.asarray(v, dtype=np.float64).copy(),
    )


def matrix_op(a: np.ndarray) -> DifferentiableOp:
    """Linear operator x -> A x with the exact adjoint Re(A^H r)."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise ConfigurationError("matrix_op expects a 2-D array")
    kind = "complex" if np.iscomplexobj(a) else "real"
    mat = a.astype(np.complex128 if kind == "complex" else np.float64)

    def forward(x):
        return mat @ np.asarray(x, dtype=np.float64)

    def vjp(x, r):
        return np.real(mat.conj().T @ np.asarray(r))

    return DifferentiableOp(
        in_dim=mat.shape[1], out_dim=mat.shape[0], out_kind=kind,
        forward=forward, vjp=vjp,
        jvp=lambda x, v: mat @ np.asarray(v, dtype=np.float64),
    )


def scale_op(n: int, alpha: float) -> DifferentiableOp:
    """Elementwise scaling x -> alpha * x."""
    return DifferentiableOp(
        in_dim=n,
        out_dim=n,
        out_kind="real",
        forward=lambda x: alpha * np.asarray(x, dtype=np.float64),
        vjp=lambda x, r: alpha * np.asarray(r, dtype=np.float64),
        jvp=lambda x, v: alpha * np.asarray(v, dtype=np.float64),
    )


def compose(outer: DifferentiableOp, inner: DifferentiableOp) -> DifferentiableOp:
    """The composition outer(inner(x)) with the chained VJP.

    The inner operator must produce real vectors of the outer operator's
    input length; the chained adjoint is
    ``inner.vjp(x, outer.vjp(inner(x), r))``.
    """
    if inner.out_dim != outer.in_dim:
        raise ConfigurationError(
            f"cannot compose: inner operator ({inner.in_dim}->{inner.out_dim}, "
            f"{inner.out_kind}) feeds outer operator ({outer.in_dim}->{outer.out_dim})"
        )
    if inner.out_kind != "real":
        raise ConfigurationError(
            "cannot compose: inner operator must have real output "
            f"(got {inner.out_kind})"
        )

    def forward(x):
        return outer.forward(inner.forward(x))

    def vjp(x, r):
        mid = inner.forward(x)
        return inner.vjp(x, outer.vjp(mid, r))

    jvp = None
    if inner.jvp is not None and outer.jvp is not None:
        def jvp(x, v):
            return outer.jvp(inner.forward(x), inner.jvp(x, v))

    return DifferentiableOp(
        in_dim=inner.in_dim,
        out_dim=outer.out_dim,
        out_kind=outer.out_kind,
        forward=forward,
        vjp=vjp,
        jvp=jvp,
        sample_domain=inner.sample_domain,
    )


def adjoint_check(op: DifferentiableOp, trials: int = 20, seed: int = 0) -> float:
    """Max relative defect of the adjoint identity over random trials.

    Each trial draws an in-domain point x, a random direction v (unit
    norm) and a random cotangent r, forms Jv (exactly when the operator
    carries a jvp, by central finite differences with step ``FD_STEP``
    otherwise) and returns the largest

        |<Jv, r> - <v, vjp(x, r)>| / (||Jv|| ||r|| + eps)

    over all trials, using the real inner product throughout.
    """
    if trials < 1:
        raise ConfigurationError("adjoint_check needs trials >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        x = op.draw_point(rng)
        v = rng.standard_normal(op.in_dim)
        v /= np.linalg.norm(v)
        r = op.draw_cotangent(rng)

        if op.jvp is not None:
            jv = np.asarray(op.jvp(x, v))
            if not np.all(np.isfinite(jv)):
                raise NumericalError(f"non-finite jvp output in trial {trial}")
        else:
            y_plus = np.asarray(op.forward(x + FD_STEP * v))
            y_minus = np.asarray(op.forward(x - FD_STEP * v))
            if not (np.all(np.isfinite(y_plus)) and np.all(np.isfinite(y_minus))):
                raise NumericalError(f"non-finite forward output in trial {trial}")
            jv = (y_plus - y_minus) / (2.0 * FD_STEP)

        lhs = real_inner(jv, r)
        rhs = real_inner(v, op.vjp(x, r))
        denom = np.linalg.norm(jv) * np.linalg.norm(r) + 1e-30
        defect = abs(lhs - rhs) / denom
        worst = max(worst, defect)
    return worst
