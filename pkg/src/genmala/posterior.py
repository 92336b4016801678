"""Latent-space posterior targets, the MALA sampler and chain summaries.

The posterior over the latent vector z combines a measurement likelihood
(Gaussian or Poisson) evaluated at H(G_h(z)) with a standard normal prior
on z.  Everything is handled in log-domain: at realistic noise levels the
likelihood exponents reach -1e5, far outside what densities survive.

MALA proposes z + eta * grad(log p) + sqrt(2 eta) * N(0, I) and corrects
with a Metropolis accept/reject step, which keeps the chain exact for the
target rather than the discretized Langevin flow.  One posterior gradient
is evaluated per proposal; the current point's value/gradient ride along
in the chain state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from genmala.exceptions import ConfigurationError, InitializationError, NumericalError
from genmala.generator import LatentSpec, decoder_op
from genmala.operators import DifferentiableOp

# Positivity floor applied to Poisson rates before the log; events counted
# in diagnostics.
POISSON_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# likelihoods
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """Measurement noise: additive white Gaussian or Poisson counting."""

    kind: str
    sigma: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "poisson"):
            raise ConfigurationError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian" and (self.sigma is None or self.sigma <= 0):
            raise ConfigurationError("gaussian noise needs sigma > 0")


def _check_poisson_counts(y: np.ndarray):
    if np.iscomplexobj(y) or np.any(y < 0) or np.any(y != np.round(y)):
        raise ConfigurationError("poisson measurements must be non-negative integers")


def log_likelihood(noise: NoiseModel, y: np.ndarray, y0: np.ndarray) -> float:
    """Log p(y | y0) up to y-only constants.

    Gaussian: -||y - y0||^2 / (2 sigma^2) (norm sums |.|^2, so complex
    measurements are covered).  Poisson: sum(y log y0 - y0) with the
    log-factorial dropped and y0 floored at POISSON_FLOOR.
    """
    val, _, _ = _loglik_terms(noise, y, y0, want_grad=False)
    return val


def dloglik_dy0(noise: NoiseModel, y: np.ndarray, y0: np.ndarray) -> np.ndarray:
    """Cotangent of the log-likelihood with respect to y0.

    Gaussian: (y - y0)/sigma^2; Poisson: y/y0 - 1.  Feeding this into a
    forward operator's vjp yields the image-space likelihood gradient.
    """
    _, grad, _ = _loglik_terms(noise, y, y0, want_grad=True)
    return grad


def _loglik_terms(noise: NoiseModel, y, y0, want_grad: bool):
    y = np.asarray(y)
    y0 = np.asarray(y0)
    if y.shape != y0.shape:
        raise ConfigurationError(f"measurement shapes differ: {y.shape} vs {y0.shape}")
    if noise.kind == "gaussian":
        resid = y - y0
        val = -float(np.real(np.vdot(resid, resid))) / (2.0 * noise.sigma ** 2)
        grad = resid / noise.sigma ** 2 if want_grad else None
        return val, grad, 0
    _check_poisson_counts(y)
    floored = int(np.count_nonzero(y0 < POISSON_FLOOR))
    y0f = np.maximum(np.asarray(y0, dtype=np.float64), POISSON_FLOOR)
    val = float(np.sum(y * np.log(y0f) - y0f))
    grad = y / y0f - 1.0 if want_grad else None
    return val, grad, floored


# ---------------------------------------------------------------------------
# measurement sets and the latent target
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasurementSet:
    """Measurements y tied to the forward operator and noise model."""

    y: np.ndarray
    forward: DifferentiableOp
    noise: NoiseModel

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.shape != (self.forward.out_dim,):
            raise ConfigurationError(
                f"measurement length {y.shape} does not match operator "
                f"output {self.forward.out_dim}"
            )
        if self.noise.kind == "poisson":
            _check_poisson_counts(y)


class LatentPosterior:
    """log p(z | y) = loglik(y, H(G_h(z))) - ||z||^2 / 2, up to a constant.

    ``prior`` may be an AugmentedGenerator, a plain GeneratorModel or any
    DifferentiableOp acting as the decoder.  ``likelihood_weight`` scales
    the data term (0 turns the target into the pure latent prior).
    Diagnostics accumulate the Poisson floor count across evaluations.
    """

    def __init__(self, meas: MeasurementSet, prior, likelihood_weight: float = 1.0):
        self.meas = meas
        self.decoder = decoder_op(prior)
        if self.decoder.out_dim != meas.forward.in_dim:
            raise ConfigurationError(
                f"decoder produces {self.decoder.out_dim} pixels, forward "
                f"operator consumes {meas.forward.in_dim}"
            )
        self.latent = LatentSpec(self.decoder.in_dim)
        self.likelihood_weight = likelihood_weight
        self.diagnostics = {"poisson_floor_count": 0, "evaluations": 0}

    @property
    def dim(self) -> int:
        return self.decoder.in_dim

    def value_and_grad(self, z: np.ndarray) -> Tuple[float, np.ndarray]:
        z = np.asarray(z, dtype=np.float64)
        s = self.decoder.forward(z)
        y0 = self.meas.forward.forward(s)
        if not np.all(np.isfinite(s)) or not np.all(np.isfinite(y0)):
            raise NumericalError(f"non-finite forward evaluation at z={z!r}")
        val, dld_y0, floored = _loglik_terms(self.meas.noise, self.meas.y, y0,
                                             want_grad=True)
        self.diagnostics["poisson_floor_count"] += floored
        self.diagnostics["evaluations"] += 1
        w = self.likelihood_weight
        grad_s = self.meas.forward.vjp(s, dld_y0)
        grad = w * self.decoder.vjp(z, grad_s) + self.latent.grad_log_density(z)
        return w * val - 0.5 * float(z @ z), grad

    def value(self, z: np.ndarray) -> float:
        return self.value_and_grad(z)[0]


def log_posterior(meas: MeasurementSet, prior, z: np.ndarray) -> float:
    return LatentPosterior(meas, prior).value_and_grad(z)[0]


def grad_log_posterior(meas: MeasurementSet, prior, z: np.ndarray) -> np.ndarray:
    return LatentPosterior(meas, prior).value_and_grad(z)[1]


# ---------------------------------------------------------------------------
# MALA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplerConfig:
    step: float  # eta
    burn_in: int
    samples: int
    seed: int
    thin: int = 1

    def __post_init__(self):
        if self.step <= 0:
            raise ConfigurationError(f"MALA step must be positive, got {self.step}")
        if self.burn_in < 0 or self.samples < 1 or self.thin < 1:
            raise ConfigurationError("need burn_in >= 0, samples >= 1, thin >= 1")


@dataclass
class MalaState:
    """Current point with its cached log-density and gradient."""

    z: np.ndarray
    logp: float
    grad: np.ndarray


@dataclass
class ChainRecord:
    """Retained post-burn-in samples plus acceptance bookkeeping."""

    latent_samples: np.ndarray  # (kept, dim)
    log_posterior_trace: np.ndarray  # (kept,)
    accept_count: int
    proposals_total: int
    nonfinite_count: int
    config: SamplerConfig

    @property
    def acceptance_rate(self) -> float:
        return self.accept_count / max(self.proposals_total, 1)


def _log_q(to_z, from_z, from_grad, step):
    # q(to | from) ~ exp(-||to - from - eta grad(from)||^2 / (4 eta))
    diff = to_z - from_z - step * from_grad
    return -float(diff @ diff) / (4.0 * step)


def mala_step(target, state: MalaState, step: float,
              rng: np.random.Generator) -> Tuple[MalaState, bool, bool]:
    """One proposal/accept-reject cycle.

    Returns (new state, accepted, proposal_was_finite).  A proposal whose
    density or gradient is non-finite is rejected outright.  The
    acceptance ratio is formed entirely in log-domain.
    """
    zeta = rng.standard_normal(state.z.shape[0])
    proposal = state.z + step * state.grad + math.sqrt(2.0 * step) * zeta
    u = rng.uniform()

    try:
        logp_prop, grad_prop = target.value_and_grad(proposal)
    except NumericalError:
        return state, False, False
    if not math.isfinite(logp_prop) or not np.all(np.isfinite(grad_prop)):
        return state, False, False

    delta = (logp_prop - state.logp
             + _log_q(state.z, proposal, grad_prop, step)
             - _log_q(proposal, state.z, state.grad, step))
    if math.log(u) < min(0.0, delta):
        return MalaState(z=proposal, logp=logp_prop, grad=grad_prop), True, True
    return state, False, True


def run_chain(target, cfg: SamplerConfig, z_init: np.ndarray) -> ChainRecord:
    """Burn in, then retain every ``thin``-th of ``samples`` MALA steps.

    Deterministic in cfg.seed: the same target, config and start produce a
    bit-identical record.
    """
    rng = np.random.default_rng(cfg.seed)
    z0 = np.asarray(z_init, dtype=np.float64)
    logp, grad = target.value_and_grad(z0)
    if not math.isfinite(logp):
        raise NumericalError("chain start has non-finite log-density")
    state = MalaState(z=z0.copy(), logp=logp, grad=grad)

    kept = (cfg.samples + cfg.thin - 1) // cfg.thin
    samples = np.empty((kept, z0.shape[0]))
    trace = np.empty(kept)
    accepted = 0
    nonfinite = 0

    for t in range(cfg.burn_in + cfg.samples):
        state, acc, finite = mala_step(target, state, cfg.step, rng)
        accepted += acc
        nonfinite += not finite
        post = t - cfg.burn_in
        if post >= 0 and post % cfg.thin == 0:
            samples[post // cfg.thin] = state.z
            trace[post // cfg.thin] = state.logp

    return ChainRecord(
        latent_samples=samples,
        log_posterior_trace=trace,
        accept_count=accepted,
        proposals_total=cfg.burn_in + cfg.samples,
        nonfinite_count=nonfinite,
        config=cfg,
    )


# ---------------------------------------------------------------------------
# initialization and summaries
# ---------------------------------------------------------------------------

def init_latent(prior, s_init: np.ndarray, iters: int = 400, step: float = 1e-3,
                restarts: int = 10, seed: int = 0) -> np.ndarray:
    """Latent start fitting the initial image: argmin_z ||s_init - G_h(z)||^2.

    Gradient descent restarted from ``restarts`` seeded standard normal
    draws; the best final objective wins.  The step halves whenever a
    trial step would increase the objective and grows back geometrically
    after clean steps (the landscape's conditioning varies by orders of
    magnitude, so a strictly fixed step stalls).  The objective never
    increases along accepted steps.
    """
    dec = decoder_op(prior)
    s_init = np.asarray(s_init, dtype=np.float64)
    if s_init.shape != (dec.out_dim,):
        raise ConfigurationError(
            f"initial image length {s_init.shape} does not match decoder "
            f"output {dec.out_dim}"
        )

    def objective_grad(z):
        resid = s_init - dec.forward(z)
        return float(resid @ resid), -2.0 * dec.vjp(z, resid)

    rng = np.random.default_rng(seed)
    best_z, best_f = None, math.inf
    for _ in range(max(restarts, 1)):
        z = rng.standard_normal(dec.in_dim)
        f, g = objective_grad(z)
        if not math.isfinite(f):
            continue
        lr = step
        ok = True
        for _ in range(iters):
            cand = z - lr * g
            f_cand, g_cand = objective_grad(cand)
            halved = False
            while (not math.isfinite(f_cand) or f_cand > f) and lr > step * 1e-14:
                lr *= 0.5
                halved = True
                cand = z - lr * g
                f_cand, g_cand = objective_grad(cand)
            if not math.isfinite(f_cand) or f_cand > f:
                ok = False
                break
            z, f, g = cand, f_cand, g_cand
            if not halved:
                lr = min(lr * 1.5, step * 1e6)
        if ok and f < best_f:
            best_z, best_f = z, f
    if best_z is None:
        raise InitializationError(
            "latent initialization diverged from every restart; try a smaller step"
        )
    return best_z


class RunningMoments:
    """Streaming mean and variance (Welford), mergeable across chains."""

    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, x: np.ndarray):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def merge(self, other: "RunningMoments"):
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean.copy(), other.m2.copy()
            return self
        total = self.n + other.n
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.n / total)
        self.m2 = self.m2 + other.m2 + delta ** 2 * (self.n * other.n / total)
        self.n = total
        return self

    def std(self) -> np.ndarray:
        if self.n < 2:
            raise ConfigurationError("standard deviation needs at least 2 samples")
        return np.sqrt(self.m2 / (self.n - 1))


def summarize(record: ChainRecord, prior) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean image and pixelwise standard deviation map.

    Each retained latent sample is decoded exactly once and folded into
    streaming moments, so image-space memory stays at two accumulators no
    matter how long the chain is.  The std uses the T-1 divisor.
    """
    if record.latent_samples.shape[0] < 2:
        raise ConfigurationError("summarize needs at least 2 retained samples")
    dec = decoder_op(prior)
    moments = RunningMoments(dec.out_dim)
    for z in record.latent_samples:
        moments.update(dec.forward(z))
    return moments.mean, moments.std()
