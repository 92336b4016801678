"""Generator and critic architectures.

The disc pair works on 128 x 128 images: the generator expands a latent
1x1 feature map with a padded 4x4 convolution and grows it with
nearest-neighbour upsampling plus shape-preserving 3x3 convolutions up to
full resolution, ending in a 1x1 sigmoid head; the critic mirrors it with
max-pool downsampling and a final fully connected score.  The MNIST pair
is fully connected with frozen-statistics batch norm inside the generator
blocks.  Leaky ReLUs use slope 0.2 throughout.

``width`` scales every channel count so the same topology trains at desk
scale in minutes; width=1.0 reproduces the full-size channel counts.
"""

from __future__ import annotations

import torch
from torch import nn

LRELU_SLOPE = 0.2

DISC_LATENT_DIM = 128
DISC_CHANNELS = (512, 512, 512, 256, 128, 64, 32)  # full-scale widths
MNIST_LATENT_DIM = 100
MNIST_HIDDEN = (128, 256, 512, 1024)


def _scaled(channels, width: float):
    return tuple(max(4, int(round(c * width))) for c in channels)


def build_disc_generator(latent_dim: int = DISC_LATENT_DIM,
                         width: float = 1.0) -> nn.Sequential:
    c = _scaled(DISC_CHANNELS, width)
    layers = [
        nn.Conv2d(latent_dim, c[0], 4, padding=3),  # 1x1 -> 4x4
        nn.LeakyReLU(LRELU_SLOPE),
        nn.Conv2d(c[0], c[1], 3, padding=1),
        nn.LeakyReLU(LRELU_SLOPE),
    ]
    for c_in, c_out in zip(c[1:-1], c[2:]):
        layers += [
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(c_in, c_out, 3, padding=1),
            nn.LeakyReLU(LRELU_SLOPE),
        ]
    layers += [nn.Conv2d(c[-1], 1, 1), nn.Sigmoid()]
    return nn.Sequential(*layers)


def build_disc_critic(width: float = 1.0) -> nn.Sequential:
    c = _scaled((16, 16, 32, 64, 128, 256, 512, 512), width)
    layers = [
        nn.Conv2d(1, c[0], 1),
        nn.LeakyReLU(LRELU_SLOPE),
        nn.Conv2d(c[0], c[1], 3, padding=1),
        nn.LeakyReLU(LRELU_SLOPE),
        nn.Conv2d(c[1], c[2], 3, padding=1),
        nn.LeakyReLU(LRELU_SLOPE),
        nn.MaxPool2d(2),
    ]
    for c_in, c_out in zip(c[2:-2], c[3:-1]):
        layers += [
            nn.Conv2d(c_in, c_out, 3, padding=1),
            nn.LeakyReLU(LRELU_SLOPE),
            nn.MaxPool2d(2),
        ]
    layers += [
        nn.Conv2d(c[-2], c[-1], 3, padding=1),
        nn.LeakyReLU(LRELU_SLOPE),
        nn.Conv2d(c[-1], c[-1], 4),  # 4x4 -> 1x1
        nn.LeakyReLU(LRELU_SLOPE),
        nn.Flatten(),
        nn.Linear(c[-1], 1),
    ]
    return nn.Sequential(*layers)


def build_mnist_generator(latent_dim: int = MNIST_LATENT_DIM,
                          width: float = 1.0,
                          output_dim: int = 784) -> nn.Sequential:
    h = _scaled(MNIST_HIDDEN, width)
    layers = [nn.Linear(latent_dim, h[0]), nn.LeakyReLU(LRELU_SLOPE)]
    for n_in, n_out in zip(h[:-1], h[1:]):
        layers += [
            nn.Linear(n_in, n_out),
            nn.BatchNorm1d(n_out),
            nn.LeakyReLU(LRELU_SLOPE),
        ]
    layers += [nn.Linear(h[-1], output_dim), nn.Sigmoid()]
    return nn.Sequential(*layers)


def build_mnist_critic(width: float = 1.0, input_dim: int = 784) -> nn.Sequential:
    h = _scaled((512, 256), width)
    return nn.Sequential(
        nn.Linear(input_dim, h[0]),
        nn.LeakyReLU(LRELU_SLOPE),
        nn.Linear(h[0], h[1]),
        nn.LeakyReLU(LRELU_SLOPE),
        nn.Linear(h[1], 1),
    )


def generator_input(generator: nn.Sequential, z: torch.Tensor) -> torch.Tensor:
    """Reshape a latent batch to whatever the first layer consumes."""
    first = generator[0]
    if isinstance(first, nn.Conv2d):
        return z.view(z.shape[0], -1, 1, 1)
    return z
