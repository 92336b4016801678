"""Synthetic piecewise-constant disc images.

Each image holds a single constant-valued disc on a zero background:
center coordinates uniform in (10, 115), radius uniform in [4, 25] and
disc value uniform in (0, 0.2], all defined on a 128 x 128 canvas.  Other
sizes scale the geometric ranges proportionally so the disc keeps its
relative footprint.
"""

from __future__ import annotations

import numpy as np

REFERENCE_SIZE = 128
CENTER_RANGE = (10.0, 115.0)
RADIUS_RANGE = (4.0, 25.0)
VALUE_MAX = 0.2


def sample_disc_params(rng: np.random.Generator, size: int = REFERENCE_SIZE) -> dict:
    scale = size / REFERENCE_SIZE
    cx = rng.uniform(*CENTER_RANGE) * scale
    cy = rng.uniform(*CENTER_RANGE) * scale
    radius = rng.uniform(*RADIUS_RANGE) * scale
    value = VALUE_MAX - rng.uniform(0.0, VALUE_MAX)  # uniform on (0, 0.2]
    return {"cx": cx, "cy": cy, "radius": radius, "value": value}


def render_disc(params: dict, size: int = REFERENCE_SIZE) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    mask = (xx - params["cx"]) ** 2 + (yy - params["cy"]) ** 2 <= params["radius"] ** 2
    return np.where(mask, params["value"], 0.0)


def sample_disc_image(rng: np.random.Generator, size: int = REFERENCE_SIZE,
                      normalized: bool = False) -> np.ndarray:
    """One disc image; normalized=True rescales the disc value to 1."""
    params = sample_disc_params(rng, size)
    img = render_disc(params, size)
    if normalized:
        img = img / params["value"]
    return img
