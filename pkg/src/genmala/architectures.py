"""Seeded generator constructions used by tests, fixtures and demos.

Weights are drawn in float32 and widened, so the models survive an AGDP
save/load round trip bit-exactly.  The fully connected stack mirrors the
MNIST-style generator (FC + frozen batch norm + leaky ReLU blocks with a
sigmoid head); the convolutional stack mirrors the disc-image generator
(4x4 expansion from a 1x1 latent map, 3x3 shape-preserving convolutions
interleaved with nearest-neighbour upsampling, 1x1 sigmoid head).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from genmala.generator import (
    AugmentedGenerator,
    BatchNorm,
    Conv2d,
    FullyConnected,
    GeneratorModel,
    LeakyReLU,
    Sigmoid,
    UpsampleNearest,
)


def _quant(arr: np.ndarray) -> np.ndarray:
    """Snap to float32 values (widened back) so AGDP round trips are lossless."""
    return np.asarray(arr).astype(np.float32).astype(np.float64)


def _f32(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    return _quant(scale * rng.standard_normal(shape))


def identity_generator(n: int) -> GeneratorModel:
    """G(z) = z, as a single fully connected layer."""
    layer = FullyConnected(weight=np.eye(n), bias=np.zeros(n))
    return GeneratorModel(layers=(layer,), latent_dim=n, output_dim=n)


def random_fc_generator(latent_dim: int, hidden: Sequence[int], output_dim: int,
                        seed: int, batch_norm: bool = True,
                        final_sigmoid: bool = True) -> GeneratorModel:
    """MLP generator with leaky-ReLU blocks and an optional sigmoid head."""
    rng = np.random.default_rng(seed)
    layers = []
    dims = [latent_dim, *hidden]
    for i in range(len(hidden)):
        fan_in = dims[i]
        layers.append(FullyConnected(
            weight=_f32(rng, (dims[i + 1], fan_in), np.sqrt(2.0 / fan_in)),
            bias=_f32(rng, (dims[i + 1],), 0.01),
        ))
        if batch_norm and i > 0:
            n = dims[i + 1]
            layers.append(BatchNorm(
                gamma=_quant(1.0 + 0.05 * rng.standard_normal(n)),
                beta=_f32(rng, (n,), 0.05),
                running_mean=_f32(rng, (n,), 0.1),
                running_var=_quant(np.abs(1.0 + 0.1 * rng.standard_normal(n))),
            ))
        layers.append(LeakyReLU(0.2))
    layers.append(FullyConnected(
        weight=_f32(rng, (output_dim, dims[-1]), np.sqrt(2.0 / dims[-1])),
        bias=_f32(rng, (output_dim,), 0.01),
    ))
    if final_sigmoid:
        layers.append(Sigmoid())
    return GeneratorModel(layers=tuple(layers), latent_dim=latent_dim,
                          output_dim=output_dim)


def random_conv_generator(latent_dim: int, channels: Sequence[int], seed: int,
                          final_sigmoid: bool = True) -> GeneratorModel:
    """Conv generator growing a 1x1 latent map to a 4*2^(len(channels)-1) square.

    channels[0] is the width after the initial 4x4 expansion; each later
    entry adds an upsample + 3x3 convolution block, doubling the side.
    """
    rng = np.random.default_rng(seed)
    layers = [
        Conv2d(kernel=_f32(rng, (channels[0], latent_dim, 4, 4),
                           np.sqrt(2.0 / latent_dim)),
               bias=_f32(rng, (channels[0],), 0.01), pad=(3, 3)),
        LeakyReLU(0.2),
    ]
    for c_in, c_out in zip(channels[:-1], channels[1:]):
        layers.append(UpsampleNearest(2))
        layers.append(Conv2d(
            kernel=_f32(rng, (c_out, c_in, 3, 3), np.sqrt(2.0 / (9 * c_in))),
            bias=_f32(rng, (c_out,), 0.01), pad=(1, 1)))
        layers.append(LeakyReLU(0.2))
    layers.append(Conv2d(kernel=_f32(rng, (1, channels[-1], 1, 1),
                                     np.sqrt(2.0 / channels[-1])),
                         bias=_f32(rng, (1,), 0.01), pad=(0, 0)))
    if final_sigmoid:
        layers.append(Sigmoid())
    side = 4 * 2 ** (len(channels) - 1)
    return GeneratorModel(layers=tuple(layers), latent_dim=latent_dim,
                          output_dim=side * side,
                          input_shape=(latent_dim, 1, 1),
                          output_shape=(1, side, side))


def random_augmented_fc(latent_dim: int, hidden: Sequence[int], output_dim: int,
                        scale_cap: float, seed: int) -> AugmentedGenerator:
    base = random_fc_generator(latent_dim, hidden, output_dim, seed)
    return AugmentedGenerator(base=base, scale_cap=scale_cap)
