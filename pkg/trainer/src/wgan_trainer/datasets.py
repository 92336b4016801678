"""Training datasets: synthetic discs and user-supplied MNIST files.

Disc images are 128 x 128 with a single constant-valued disc: center
coordinates uniform in (10, 115), radius uniform in [4, 25], value
uniform in (0, 0.2].  The normalized variant rescales each image so the
disc value is exactly 1, which is what the augmented-prior generator
trains on (the scaling factor is reintroduced at inference time).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

IMAGE_SIZE = 128
CENTER_RANGE = (10.0, 115.0)
RADIUS_RANGE = (4.0, 25.0)
VALUE_MAX = 0.2


def sample_disc_params(rng: np.random.Generator, size: int = IMAGE_SIZE) -> dict:
    scale = size / IMAGE_SIZE
    return {
        "cx": rng.uniform(*CENTER_RANGE) * scale,
        "cy": rng.uniform(*CENTER_RANGE) * scale,
        "radius": rng.uniform(*RADIUS_RANGE) * scale,
        "value": VALUE_MAX - rng.uniform(0.0, VALUE_MAX),  # uniform on (0, 0.2]
    }


def make_disc_dataset(n: int, normalized: bool, seed: int,
                      size: int = IMAGE_SIZE) -> np.ndarray:
    """(n, 1, size, size) float32 stack of single-disc images."""
    if n < 1:
        raise ValueError(f"dataset size must be positive, got {n}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    images = np.zeros((n, 1, size, size), dtype=np.float32)
    for i in range(n):
        p = sample_disc_params(rng, size)
        mask = (xx - p["cx"]) ** 2 + (yy - p["cy"]) ** 2 <= p["radius"] ** 2
        value = 1.0 if normalized else p["value"]
        images[i, 0][mask] = value
    return images


def load_mnist_images(path, limit: int | None = None) -> np.ndarray:
    """Flattened MNIST images from an IDX file, scaled to [0, 1].

    The user supplies the standard `train-images-idx3-ubyte` file
    (optionally gzipped); returns (n, 784) float32.
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        import gzip

        raw = gzip.decompress(raw)
    if int.from_bytes(raw[0:4], "big") != 2051:
        raise ValueError(f"{path}: not an IDX image file")
    n = int.from_bytes(raw[4:8], "big")
    rows = int.from_bytes(raw[8:12], "big")
    cols = int.from_bytes(raw[12:16], "big")
    data = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows * cols)
    if limit is not None:
        data = data[:limit]
    return (data.astype(np.float32) / 255.0)
