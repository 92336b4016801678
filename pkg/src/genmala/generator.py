"""Inference-mode generator networks and the augmented scaling wrapper.

A trained generator G maps a latent vector to an image; the augmented
wrapper multiplies a contrast image G(z1) by a learned-free scaling factor
h(z2) = cap * Phi(z2) (Phi the standard normal CDF), so a model trained on
normalized data can still produce images with quantitative pixel ranges.

Layer kinds are the ones the shipped architectures use: fully connected,
stride-1 conv2d, leaky ReLU, frozen batch norm (inference statistics
only), sigmoid and nearest-neighbour 2x upsampling.  Every layer carries a
hand-derived input VJP; weights are fixed, so no parameter gradients
exist.  Arithmetic is float64 throughout; weight files hold float32 (see
genmala.agdp).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from genmala.exceptions import ConfigurationError
from genmala.operators import DifferentiableOp

Shape = Union[int, Tuple[int, int, int]]  # flat feature count or (c, h, w)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FullyConnected:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    kind = "fully_connected"

    def out_shape(self, in_shape: Shape) -> Shape:
        n = in_shape if isinstance(in_shape, int) else int(np.prod(in_shape))
        if n != self.weight.shape[1]:
            raise ConfigurationError(
                f"fully_connected expects {self.weight.shape[1]} features, gets {n}"
            )
        return self.weight.shape[0]

    def forward(self, x):
        return self.weight @ x.reshape(-1) + self.bias

    def vjp(self, x, r):
        return (self.weight.T @ r).reshape(np.shape(x))


@dataclass(frozen=True)
class Conv2d:
    """Stride-1 2-D convolution (cross-correlation) with zero padding."""

    kernel: np.ndarray  # (out_c, in_c, kh, kw)
    bias: np.ndarray  # (out_c,)
    pad: Tuple[int, int]  # (pad_h, pad_w)

    kind = "conv2d"

    def out_shape(self, in_shape: Shape) -> Shape:
        if isinstance(in_shape, int):
            raise ConfigurationError("conv2d needs a (c, h, w) input, got a flat vector")
        c, h, w = in_shape
        oc, ic, kh, kw = self.kernel.shape
        if c != ic:
            raise ConfigurationError(f"conv2d expects {ic} channels, gets {c}")
        oh = h + 2 * self.pad[0] - kh + 1
        ow = w + 2 * self.pad[1] - kw + 1
        if oh < 1 or ow < 1:
            raise ConfigurationError(
                f"conv2d kernel {kh}x{kw} too large for input {h}x{w} with pad {self.pad}"
            )
        return (oc, oh, ow)

    def _pad(self, x):
        ph, pw = self.pad
        if ph == 0 and pw == 0:
            return x
        return np.pad(x, ((0, 0), (ph, ph), (pw, pw)))

    def forward(self, x):
        xp = self._pad(x)
        kh, kw = self.kernel.shape[2:]
        windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
        out = np.einsum("oikl,ihwkl->ohw", self.kernel, windows, optimize=True)
        return out + self.bias[:, None, None]

    def vjp(self, x, r):
        # grad wrt the padded input is the full correlation of the
        # cotangent with the spatially flipped kernel, summed over out
        # channels; then the padding border is dropped.
        _, h, w = x.shape
        kh, kw = self.kernel.shape[2:]
        gp = np.pad(r, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        windows = np.lib.stride_tricks.sliding_window_view(gp, (kh, kw), axis=(1, 2))
        flipped = self.kernel[:, :, ::-1, ::-1]
        grad_xp = np.einsum("oikl,ohwkl->ihw", flipped, windows, optimize=True)
        ph, pw = self.pad
        return grad_xp[:, ph:ph + h, pw:pw + w]


@dataclass(frozen=True)
class LeakyReLU:
    negative_slope: float = 0.2

    kind = "leaky_relu"

    def out_shape(self, in_shape: Shape) -> Shape:
        return in_shape

    def forward(self, x):
        return np.where(x > 0, x, self.negative_slope * x)

    def vjp(self, x, r):
        # derivative at exactly 0 pinned to the negative slope
        return np.where(x > 0, 1.0, self.negative_slope) * r


@dataclass(frozen=True)
class BatchNorm:
    """Frozen inference-time batch norm: running statistics only."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5

    kind = "batch_norm"

    def out_shape(self, in_shape: Shape) -> Shape:
        n = in_shape if isinstance(in_shape, int) else in_shape[0]
        if n != self.gamma.shape[0]:
            raise ConfigurationError(
                f"batch_norm carries {self.gamma.shape[0]} features, input has {n}"
            )
        return in_shape

    def _scale_shift(self, ndim):
        scale = self.gamma / np.sqrt(self.running_var + self.eps)
        shift = self.beta - scale * self.running_mean
        if ndim == 3:  # per-channel over (c, h, w)
            return scale[:, None, None], shift[:, None, None]
        return scale, shift

    def forward(self, x):
        scale, shift = self._scale_shift(x.ndim)
        return scale * x + shift

    def vjp(self, x, r):
        scale, _ = self._scale_shift(x.ndim)
        return scale * r


@dataclass(frozen=True)
class Sigmoid:
    kind = "sigmoid"

    def out_shape(self, in_shape: Shape) -> Shape:
        return in_shape

    def forward(self, x):
        out = np.empty_like(x, dtype=np.float64)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    def vjp(self, x, r):
        y = self.forward(x)
        return y * (1.0 - y) * r


@dataclass(frozen=True)
class UpsampleNearest:
    factor: int = 2

    kind = "upsample_nearest"

    def out_shape(self, in_shape: Shape) -> Shape:
        if isinstance(in_shape, int):
            raise ConfigurationError("upsample_nearest needs a (c, h, w) input")
        c, h, w = in_shape
        return (c, h * self.factor, w * self.factor)

    def forward(self, x):
        return np.repeat(np.repeat(x, self.factor, axis=1), self.factor, axis=2)

    def vjp(self, x, r):
        # adjoint of duplication: sum each factor x factor block
        c, h, w = x.shape
        f = self.factor
        return r.reshape(c, h, f, w, f).sum(axis=(2, 4))


Layer = Union[FullyConnected, Conv2d, LeakyReLU, BatchNorm, Sigmoid, UpsampleNearest]


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

def infer_shapes(layers: Sequence[Layer], input_shape: Shape) -> list:
    """Shape chain through the layer list; raises on any mismatch."""
    shapes = [input_shape]
    for i, layer in enumerate(layers):
        try:
            shapes.append(layer.out_shape(shapes[-1]))
        except ConfigurationError as exc:
            raise ConfigurationError(f"layer {i} ({layer.kind}): {exc}") from exc
    return shapes


@dataclass(frozen=True)
class GeneratorModel:
    """An ordered layer stack mapping R^latent_dim to R^output_dim.

    ``input_shape`` is None for flat (MLP) generators, or (latent_dim, 1, 1)
    for convolutional ones where the latent vector enters as a 1x1 feature
    map.  Outputs are always returned flattened.
    """

    layers: Tuple[Layer, ...]
    latent_dim: int
    output_dim: int
    input_shape: Optional[Tuple[int, int, int]] = None
    output_shape: Optional[Tuple[int, int, int]] = None

    def __post_init__(self):
        start: Shape = self.latent_dim if self.input_shape is None else self.input_shape
        if self.input_shape is not None and int(np.prod(self.input_shape)) != self.latent_dim:
            raise ConfigurationError("input_shape must repack exactly latent_dim values")
        shapes = infer_shapes(self.layers, start)
        final = shapes[-1]
        final_dim = final if isinstance(final, int) else int(np.prod(final))
        if final_dim != self.output_dim:
            raise ConfigurationError(
                f"layer chain produces {final_dim} outputs, model declares {self.output_dim}"
            )
        if self.output_shape is not None and not isinstance(final, int):
            if tuple(final) != tuple(self.output_shape):
                raise ConfigurationError(
                    f"layer chain produces shape {final}, model declares {self.output_shape}"
                )


def _entry(model: GeneratorModel, z1: np.ndarray) -> np.ndarray:
    z1 = np.asarray(z1, dtype=np.float64)
    if z1.shape != (model.latent_dim,):
        raise ConfigurationError(
            f"latent vector has shape {z1.shape}, model wants ({model.latent_dim},)"
        )
    if model.input_shape is not None:
        return z1.reshape(model.input_shape)
    return z1


def _forward_cached(model: GeneratorModel, z1: np.ndarray):
    """Layer-by-layer evaluation keeping every layer input for the VJP."""
    x = _entry(model, z1)
    inputs = []
    for layer in model.layers:
        inputs.append(x)
        x = layer.forward(x)
    return x, inputs  # x not yet flattened


def generator_forward(model: GeneratorModel, z1: np.ndarray) -> np.ndarray:
    """Deterministic generator evaluation, output flattened to length K."""
    out, _ = _forward_cached(model, z1)
    return out.reshape(-1)


def _backward(model: GeneratorModel, out, inputs: list, r: np.ndarray) -> np.ndarray:
    g = np.asarray(r, dtype=np.float64).reshape(np.shape(out))
    for layer, x in zip(reversed(model.layers), reversed(inputs)):
        g = layer.vjp(x, g)
    return g.reshape(-1)


def generator_vjp(model: GeneratorModel, z1: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Exact reverse-mode J_G^T r through all layers."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (model.output_dim,):
        raise ConfigurationError(
            f"cotangent has shape {r.shape}, model outputs ({model.output_dim},)"
        )
    out, inputs = _forward_cached(model, z1)
    return _backward(model, out, inputs, r)


def generator_op(model: GeneratorModel) -> DifferentiableOp:
    return DifferentiableOp(
        in_dim=model.latent_dim,
        out_dim=model.output_dim,
        out_kind="real",
        forward=lambda z: generator_forward(model, z),
        vjp=lambda z, r: generator_vjp(model, z, r),
    )


# ---------------------------------------------------------------------------
# scaling function and augmented wrapper
# ---------------------------------------------------------------------------

def scaling_h(x: float, cap: float) -> float:
    """h(x) = cap * Phi(x): strictly increasing, range (0, cap)."""
    if cap <= 0:
        raise ConfigurationError(f"scale cap must be positive, got {cap}")
    return cap * 0.5 * math.erfc(-x / math.sqrt(2.0))


def scaling_h_prime(x: float, cap: float) -> float:
    """h'(x) = cap * standard normal pdf at x; positive everywhere."""
    if cap <= 0:
        raise ConfigurationError(f"scale cap must be positive, got {cap}")
    return cap * math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def scaling_h_inverse(y: float, cap: float) -> float:
    """x with h(x) = y, for y in (0, cap).  Newton on the CDF."""
    if not 0.0 < y < cap:
        raise ConfigurationError(f"scaling value {y} outside (0, {cap})")
    x = 0.0
    for _ in range(60):
        f = scaling_h(x, cap) - y
        x -= f / scaling_h_prime(x, cap)
    return x


@dataclass(frozen=True)
class LatentSpec:
    """Standard multivariate Gaussian latent distribution.

    Both the log-density and its gradient (-z) are closed-form; the
    posterior target leans on exactly these two facts.
    """

    dim: int

    def log_density(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=np.float64)
        return -0.5 * float(z @ z) - 0.5 * self.dim * math.log(2.0 * math.pi)

    def grad_log_density(self, z: np.ndarray) -> np.ndarray:
        return -np.asarray(z, dtype=np.float64)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.dim)


@dataclass(frozen=True)
class AugmentedGenerator:
    """G_h(z) = h(z_2) * G(z_1) with z = (z_1, z_2) in R^(d+1)."""

    base: GeneratorModel
    scale_cap: float

    def __post_init__(self):
        if self.scale_cap <= 0:
            raise ConfigurationError(f"scale cap must be positive, got {self.scale_cap}")

    @property
    def latent_dim(self) -> int:
        return self.base.latent_dim + 1

    @property
    def output_dim(self) -> int:
        return self.base.output_dim


def _split(ag: AugmentedGenerator, z: np.ndarray):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (ag.latent_dim,):
        raise ConfigurationError(
            f"latent vector has shape {z.shape}, augmented model wants ({ag.latent_dim},)"
        )
    return z[:-1], float(z[-1])


def augmented_forward(ag: AugmentedGenerator, z: np.ndarray) -> np.ndarray:
    z1, z2 = _split(ag, z)
    return scaling_h(z2, ag.scale_cap) * generator_forward(ag.base, z1)


def augmented_vjp(ag: AugmentedGenerator, z: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Gradient of <G_h(z), r> with respect to the full latent (z_1, z_2)."""
    z1, z2 = _split(ag, z)
    r = np.asarray(r, dtype=np.float64)
    out, inputs = _forward_cached(ag.base, z1)
    base_out = out.reshape(-1)
    if r.shape != base_out.shape:
        raise ConfigurationError(
            f"cotangent has shape {r.shape}, model outputs {base_out.shape}"
        )
    h = scaling_h(z2, ag.scale_cap)
    grad = np.empty(ag.latent_dim)
    grad[:-1] = h * _backward(ag.base, out, inputs, r)
    grad[-1] = scaling_h_prime(z2, ag.scale_cap) * float(base_out @ r)
    return grad


def augmented_op(ag: AugmentedGenerator) -> DifferentiableOp:
    return DifferentiableOp(
        in_dim=ag.latent_dim,
        out_dim=ag.output_dim,
        out_kind="real",
        forward=lambda z: augmented_forward(ag, z),
        vjp=lambda z, r: augmented_vjp(ag, z, r),
    )


def decoder_op(model) -> DifferentiableOp:
    """DifferentiableOp for either a plain or an augmented generator."""
    if isinstance(model, AugmentedGenerator):
        return augmented_op(model)
    if isinstance(model, GeneratorModel):
        return generator_op(model)
    if isinstance(model, DifferentiableOp):
        return model
    raise ConfigurationError(f"not a generator model: {type(model).__name__}")
