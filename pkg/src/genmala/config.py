"""Experiment configuration: JSON schema, validation and hashing.

Configs are plain JSON with a fixed nested key set; unknown keys are
rejected so typos fail loudly instead of silently running defaults.  One
config describes a whole experiment (simulation and reconstruction share
it); section requirements depend on the modality and the reconstruction
method and are checked by ``validate_config``.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

from genmala.exceptions import ConfigurationError

# section -> allowed keys (None marks scalar top-level keys)
_SCHEMA = {
    "modality": None,
    "seed": None,
    "output_dir": None,
    "figures": None,
    "method": None,
    "forward": {
        "k", "m_over_k", "sigma_a_sq", "matrix_seed",  # phase retrieval
        "nx", "nz", "dx", "dz", "n_b", "lambda0",  # odt grid
        "q", "theta", "sensor_distance", "pad_factor",  # odt illumination
    },
    "noise": {"kind", "alpha", "sigma_sq"},
    "ground_truth": {"source", "path", "size"},
    "prior": {"weights"},
    "sampler": {"step", "burn_in", "samples", "seed", "thin"},
    "baseline": {"solver", "tau_reg", "grid", "max_iters", "step", "tol",
                 "prox_iters"},
    "init": {"source", "path", "tau_reg", "max_iters", "step",
             "latent_iters", "latent_step", "restarts"},
}

_MODALITIES = ("phase_retrieval", "odt")
_METHODS = ("mala", "baseline")


def _reject_unknown(cfg: dict):
    for key, value in cfg.items():
        if key not in _SCHEMA:
            raise ConfigurationError(f"unknown config key {key!r}")
        allowed = _SCHEMA[key]
        if allowed is None:
            continue
        if not isinstance(value, dict):
            raise ConfigurationError(f"config section {key!r} must be an object")
        for sub in value:
            if sub not in allowed:
                raise ConfigurationError(f"unknown config key {key!r}.{sub!r}")


def _require(cfg: dict, section: str, keys: tuple):
    block = cfg.get(section)
    if block is None:
        raise ConfigurationError(f"config needs a {section!r} section")
    for key in keys:
        if key not in block:
            raise ConfigurationError(f"config needs {section!r}.{key!r}")


def validate_config(cfg: dict, for_reconstruction: bool = False) -> dict:
    """Check the key set, modality consistency and value sanity."""
    if not isinstance(cfg, dict):
        raise ConfigurationError("config must be a JSON object")
    _reject_unknown(cfg)

    modality = cfg.get("modality")
    if modality not in _MODALITIES:
        raise ConfigurationError(
            f"modality must be one of {_MODALITIES}, got {modality!r}"
        )
    if modality == "phase_retrieval":
        _require(cfg, "forward", ("k", "m_over_k", "sigma_a_sq", "matrix_seed"))
        if cfg["forward"]["k"] < 1 or cfg["forward"]["m_over_k"] <= 0:
            raise ConfigurationError("phase retrieval needs k >= 1 and m_over_k > 0")
    else:
        _require(cfg, "forward", ("nx", "nz", "dx", "dz", "n_b", "lambda0", "q", "theta"))

    _require(cfg, "noise", ("kind",))
    kind = cfg["noise"]["kind"]
    if kind == "gaussian":
        if cfg["noise"].get("sigma_sq", 0) <= 0:
            raise ConfigurationError("gaussian noise needs sigma_sq > 0")
    elif kind == "poisson":
        alpha = cfg["noise"].get("alpha")
        if alpha is not None and not 0 < alpha <= 0.5:
            raise ConfigurationError("poisson scaling alpha must lie in (0, 0.5]")
    else:
        raise ConfigurationError(f"unknown noise kind {kind!r}")

    if for_reconstruction:
        method = cfg.get("method")
        if method not in _METHODS:
            raise ConfigurationError(f"method must be one of {_METHODS}, got {method!r}")
        if method == "mala":
            _require(cfg, "prior", ("weights",))
            _require(cfg, "sampler", ("step", "burn_in", "samples", "seed"))
            if cfg["sampler"]["step"] <= 0:
                raise ConfigurationError("sampler step must be positive")
        else:
            _require(cfg, "baseline", ("solver",))
            if cfg["baseline"]["solver"] not in ("tv", "tikhonov"):
                raise ConfigurationError("baseline solver must be 'tv' or 'tikhonov'")
    return cfg


def load_config(path, for_reconstruction: bool = False) -> dict:
    path = Path(path)
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    return validate_config(cfg, for_reconstruction)


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    """Stable identity of a config: sha256 of its canonical JSON."""
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def gaussian_sigma(cfg: dict) -> float:
    return math.sqrt(cfg["noise"]["sigma_sq"])
