"""Experiment pipelines: simulate measurements, reconstruct, persist.

One JSON config describes an experiment; ``run_simulate`` writes the
measurement set under <output>/measurements and ``run_reconstruct`` reads
it back and writes images, metrics, a reproducibility manifest and
figures under <output>/reconstruction.  Everything is deterministic given
the config and seeds: output bytes differ across runs only in wall-time
metric lines.
"""

from __future__ import annotations

import json
import math
import time
import zlib
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from filelock import FileLock

from genmala import __version__, agdp
from genmala.arrayio import load_array, save_array
from genmala.baselines import (
    SolverResult,
    VariationalConfig,
    energy_matched_init,
    grid_search,
    tikhonov_poisson,
    tv_fista,
)
from genmala.bpm import GridSpec, SensorSpec, bpm_operator, make_plane_wave, uniform_angles
from genmala.config import config_hash, gaussian_sigma, validate_config
from genmala.exceptions import ConfigurationError
from genmala.generator import AugmentedGenerator, augmented_forward, scaling_h_inverse
from genmala.operators import DifferentiableOp
from genmala.phase_retrieval import SensingMatrix, make_sensing_matrix, pr_operator
from genmala.posterior import (
    LatentPosterior,
    MeasurementSet,
    NoiseModel,
    SamplerConfig,
    init_latent,
    run_chain,
    summarize,
)
from genmala import discs, report


# ---------------------------------------------------------------------------
# forward-model assembly
# ---------------------------------------------------------------------------

def build_phase_retrieval(cfg: dict) -> Tuple[SensingMatrix, DifferentiableOp, Tuple[int, int]]:
    fwd = cfg["forward"]
    k = int(fwd["k"])
    m = max(1, round(fwd["m_over_k"] * k))
    a = make_sensing_matrix(m, k, float(fwd["sigma_a_sq"]), int(fwd["matrix_seed"]))
    side = int(round(math.sqrt(k)))
    shape = (side, k // side) if side * (k // side) == k else (1, k)
    return a, pr_operator(a), shape


def build_odt(cfg: dict, threads: int = 1):
    fwd = cfg["forward"]
    grid = GridSpec(nx=int(fwd["nx"]), nz=int(fwd["nz"]), dx=float(fwd["dx"]),
                    dz=float(fwd["dz"]), n_b=float(fwd["n_b"]),
                    lambda0=float(fwd["lambda0"]))
    angles = uniform_angles(int(fwd["q"]), float(fwd["theta"]))
    waves = [make_plane_wave(grid, a) for a in angles]
    sensor = SensorSpec(distance=float(fwd.get("sensor_distance", 0.0)))
    op = bpm_operator(grid, waves, sensor,
                      pad_factor=int(fwd.get("pad_factor", 1)), threads=threads)
    return grid, op, (grid.nz, grid.nx)


def build_forward(cfg: dict, threads: int = 1):
    """Returns (sensing matrix or None, forward op, image shape)."""
    if cfg["modality"] == "phase_retrieval":
        return build_phase_retrieval(cfg)
    _, op, shape = build_odt(cfg, threads)
    return None, op, shape


def noise_model(cfg: dict) -> NoiseModel:
    kind = cfg["noise"]["kind"]
    if kind == "gaussian":
        return NoiseModel("gaussian", sigma=gaussian_sigma(cfg))
    return NoiseModel("poisson")


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------

def make_ground_truth(cfg: dict, shape: Tuple[int, int],
                      rng: np.random.Generator) -> np.ndarray:
    """Flat ground-truth image per the config's ground_truth source.

    * disc: one synthetic constant-valued disc at the image size.
    * file: an ARR1 image, normalized to [0, 1] and scaled by the Poisson
      scaling alpha when one is configured.
    * model: a draw from the configured generative prior; with a Poisson
      alpha the scale coordinate is pinned so the scaling factor equals
      alpha, otherwise it is sampled.
    """
    gt_cfg = cfg.get("ground_truth")
    if gt_cfg is None or "source" not in gt_cfg:
        raise ConfigurationError("simulation needs a ground_truth.source")
    source = gt_cfg["source"]
    k = shape[0] * shape[1]

    if source == "disc":
        size = int(gt_cfg.get("size", shape[0]))
        if (size, size) != shape:
            raise ConfigurationError(
                f"disc ground truth size {size} does not match image shape {shape}"
            )
        return discs.sample_disc_image(rng, size).reshape(-1)

    if source == "file":
        path = gt_cfg.get("path")
        if path is None or not Path(path).exists():
            raise ConfigurationError(f"ground truth file missing: {path}")
        img = load_array(path).astype(np.float64)
        if img.size != k:
            raise ConfigurationError(
                f"ground truth file has {img.size} pixels, experiment wants {k}"
            )
        img = img.reshape(-1)
        span = img.max() - img.min()
        if span > 0:
            img = (img - img.min()) / span
        alpha = cfg["noise"].get("alpha")
        return img * float(alpha) if alpha is not None else img

    if source == "model":
        prior = _load_prior(cfg)
        if not isinstance(prior, AugmentedGenerator):
            raise ConfigurationError("model-sampled ground truth needs an augmented prior")
        if prior.output_dim != k:
            raise ConfigurationError(
                f"prior outputs {prior.output_dim} pixels, experiment wants {k}"
            )
        z = rng.standard_normal(prior.latent_dim)
        alpha = cfg["noise"].get("alpha")
        if alpha is not None:
            z[-1] = scaling_h_inverse(float(alpha), prior.scale_cap)
        return augmented_forward(prior, z)

    raise ConfigurationError(f"unknown ground truth source {source!r}")


def _load_prior(cfg: dict):
    prior_cfg = cfg.get("prior") or {}
    path = prior_cfg.get("weights")
    if path is None:
        raise ConfigurationError("config needs prior.weights for this operation")
    return agdp.load_model(path)


# ---------------------------------------------------------------------------
# persistence helpers
# ---------------------------------------------------------------------------

def _file_crc(path: Path) -> int:
    with open(path, "rb") as fh:
        return zlib.crc32(fh.read()) & 0xFFFFFFFF


def _write_manifest(directory: Path, cfg: dict, seed: int, extra: dict) -> None:
    manifest = {
        "config_hash": config_hash(cfg),
        "seed": seed,
        "package_version": __version__,
        **extra,
        "artifacts": {
            p.name: _file_crc(p)
            for p in sorted(directory.iterdir())
            if p.is_file() and p.suffix in (".arr", ".csv", ".json") and p.name != "manifest.json"
        },
    }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _snapshot_config(directory: Path, cfg: dict) -> None:
    with open(directory / "config_snapshot.json", "w") as fh:
        json.dump(cfg, fh, sort_keys=True, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def run_simulate(cfg: dict, output_dir, seed: Optional[int] = None,
                 threads: int = 1) -> dict:
    """Draw a ground truth, push it through the forward model, add noise.

    Writes y.arr, ground_truth.arr, a resolved config snapshot and a
    manifest under <output_dir>/measurements.  Deterministic in the seed.
    """
    validate_config(cfg)
    seed = int(cfg.get("seed", 0)) if seed is None else int(seed)
    out_root = Path(output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    with FileLock(out_root / ".genmala.lock"):
        meas_dir = out_root / "measurements"
        meas_dir.mkdir(exist_ok=True)
        rng = np.random.default_rng(seed)

        _, op, shape = build_forward(cfg, threads)
        gt = make_ground_truth(cfg, shape, rng)
        y0 = op.forward(gt)

        kind = cfg["noise"]["kind"]
        if kind == "poisson":
            y = rng.poisson(np.maximum(y0, 0.0)).astype(np.int64)
        else:
            sigma = gaussian_sigma(cfg)
            if np.iscomplexobj(y0):
                y = y0 + sigma * (rng.standard_normal(y0.shape)
                                  + 1j * rng.standard_normal(y0.shape))
            else:
                y = y0 + sigma * rng.standard_normal(y0.shape)

        save_array(y, meas_dir / "y.arr")
        save_array(gt.reshape(shape), meas_dir / "ground_truth.arr")
        _snapshot_config(meas_dir, cfg)
        _write_manifest(meas_dir, cfg, seed, {"stage": "simulate"})
    return {"measurements_dir": str(meas_dir), "m": int(np.size(y)),
            "k": int(gt.size)}


# ---------------------------------------------------------------------------
# reconstruct
# ---------------------------------------------------------------------------

def _initial_image(cfg: dict, a, op, y, shape) -> Tuple[np.ndarray, dict]:
    init_cfg = cfg.get("init") or {}
    source = init_cfg.get("source", "tikhonov" if a is not None else "zeros")
    if source == "file":
        path = init_cfg.get("path")
        if path is None or not Path(path).exists():
            raise ConfigurationError(f"init file missing: {path}")
        return load_array(path).astype(np.float64).reshape(-1), {"init_source": "file"}
    if source == "zeros":
        return np.zeros(op.in_dim), {"init_source": "zeros"}
    if source == "flat":
        if a is None:
            raise ConfigurationError("flat (energy-matched) init needs a sensing matrix")
        return energy_matched_init(a, y), {"init_source": "flat"}
    if source == "tikhonov":
        if a is None:
            raise ConfigurationError("tikhonov init is phase-retrieval only; "
                                     "use init.source=zeros or a file for odt")
        vcfg = VariationalConfig(
            tau_reg=float(init_cfg.get("tau_reg", 1e-3)),
            max_iters=int(init_cfg.get("max_iters", 400)),
            step=float(init_cfg.get("step", 1e-4)),
        )
        res = tikhonov_poisson(a, y, vcfg, shape)
        return res.image, {"init_source": "tikhonov",
                           "init_objective": res.objective,
                           "init_iterations": res.iterations}
    raise ConfigurationError(f"unknown init source {source!r}")


def run_reconstruct(cfg: dict, output_dir, seed: Optional[int] = None,
                    threads: int = 1) -> dict:
    """Reconstruct from simulated measurements per the configured method.

    method=mala: Tikhonov (or configured) initial image, latent fit,
    MALA chain, posterior mean / std maps.  method=baseline: TV or
    Tikhonov variational solve, optionally over a regularization grid.
    Writes arrays, metrics, figures and a manifest under
    <output_dir>/reconstruction.
    """
    validate_config(cfg, for_reconstruction=True)
    seed = int(cfg.get("seed", 0)) if seed is None else int(seed)
    out_root = Path(output_dir)
    meas_dir = out_root / "measurements"
    if not (meas_dir / "y.arr").exists():
        raise ConfigurationError(f"no measurements found under {meas_dir}; run simulate first")

    # fail fast on the weight file before touching any data
    prior = _load_prior(cfg) if cfg["method"] == "mala" else None

    with FileLock(out_root / ".genmala.lock"):
        rec_dir = out_root / "reconstruction"
        rec_dir.mkdir(parents=True, exist_ok=True)

        y = load_array(meas_dir / "y.arr")
        gt_path = meas_dir / "ground_truth.arr"
        gt = load_array(gt_path).reshape(-1) if gt_path.exists() else None

        a, op, shape = build_forward(cfg, threads)
        noise = noise_model(cfg)
        if noise.kind == "poisson":
            y = y.astype(np.float64)
        meas = MeasurementSet(y=y, forward=op, noise=noise)

        started = time.perf_counter()
        if cfg["method"] == "mala":
            metrics, arrays, figures = _reconstruct_mala(
                cfg, meas, prior, a, op, y, shape, gt)
        else:
            metrics, arrays, figures = _reconstruct_baseline(
                cfg, a, op, noise, y, shape, gt, rec_dir)
        metrics["wall_time_s"] = round(time.perf_counter() - started, 3)

        for name, arr in arrays.items():
            save_array(arr, rec_dir / f"{name}.arr")
        report.write_metrics(rec_dir / "metrics.txt", metrics)
        if cfg.get("figures", True):
            fig_dir = rec_dir / "figures"
            fig_dir.mkdir(exist_ok=True)
            for name, panels in figures.items():
                if name == "trace":
                    report.render_trace(fig_dir / "trace.png", panels)
                elif name == "grid":
                    report.render_grid_curve(fig_dir / "grid_mse.png", *panels)
                else:
                    report.render_images(fig_dir / f"{name}.png", panels)
        _snapshot_config(rec_dir, cfg)
        extra = {"stage": "reconstruct"}
        if cfg["method"] == "mala":
            extra["weights_crc32"] = agdp.file_crc(cfg["prior"]["weights"])
        _write_manifest(rec_dir, cfg, seed, extra)
    return metrics


def _mse(x: Optional[np.ndarray], ref: Optional[np.ndarray]) -> Optional[float]:
    if x is None or ref is None:
        return None
    return float(np.mean((np.asarray(x).reshape(-1) - ref) ** 2))


def _reconstruct_mala(cfg, meas, prior, a, op, y, shape, gt):
    sampler_cfg = cfg["sampler"]
    init_cfg = cfg.get("init") or {}

    s_init, init_info = _initial_image(cfg, a, op, y, shape)
    z_init = init_latent(
        prior, s_init,
        iters=int(init_cfg.get("latent_iters", 300)),
        step=float(init_cfg.get("latent_step", 1e-3)),
        restarts=int(init_cfg.get("restarts", 10)),
        seed=int(sampler_cfg.get("seed", 0)),
    )
    target = LatentPosterior(meas, prior)
    chain_cfg = SamplerConfig(
        step=float(sampler_cfg["step"]),
        burn_in=int(sampler_cfg["burn_in"]),
        samples=int(sampler_cfg["samples"]),
        seed=int(sampler_cfg.get("seed", 0)),
        thin=int(sampler_cfg.get("thin", 1)),
    )
    record = run_chain(target, chain_cfg, z_init)
    mean_img, std_img = summarize(record, prior)

    metrics = {
        "method": "mala",
        "acceptance_rate": round(record.acceptance_rate, 6),
        "proposals_total": record.proposals_total,
        "nonfinite_proposals": record.nonfinite_count,
        "poisson_floor_count": target.diagnostics["poisson_floor_count"],
        **init_info,
    }
    mse_mean = _mse(mean_img, gt)
    mse_init = _mse(s_init, gt)
    if mse_mean is not None:
        metrics["mse_posterior_mean"] = mse_mean
        metrics["mse_init"] = mse_init

    arrays = {
        "mean": mean_img.reshape(shape),
        "std": std_img.reshape(shape),
        "s_init": s_init.reshape(shape),
        "z_init": z_init,
        "chain_latents": record.latent_samples,
        "chain_logp": record.log_posterior_trace,
    }
    panels = [("initial", s_init.reshape(shape)),
              ("posterior mean", mean_img.reshape(shape)),
              ("posterior std", std_img.reshape(shape))]
    if gt is not None:
        panels.insert(0, ("ground truth", gt.reshape(shape)))
    figures = {"reconstruction": panels, "trace": record.log_posterior_trace}
    return metrics, arrays, figures


def _baseline_config(cfg: dict, tau: float) -> VariationalConfig:
    base = cfg.get("baseline") or {}
    return VariationalConfig(
        tau_reg=tau,
        max_iters=int(base.get("max_iters", 300)),
        step=float(base.get("step", 1e-4)),
        tol=float(base.get("tol", 1e-9)),
        prox_iters=int(base.get("prox_iters", 50)),
    )


def _reconstruct_baseline(cfg, a, op, noise, y, shape, gt, rec_dir):
    base = cfg.get("baseline") or {}
    solver = base["solver"]
    s_init, init_info = _initial_image(cfg, a, op, y, shape)

    def solve(tau: float) -> SolverResult:
        vcfg = _baseline_config(cfg, tau)
        if solver == "tikhonov":
            if a is None:
                raise ConfigurationError("tikhonov baseline is phase-retrieval only")
            return tikhonov_poisson(a, y, vcfg, shape, s_init=s_init)
        return tv_fista(op, y, noise, vcfg, s_init, shape, a=a)

    figures = {}
    grid = base.get("grid")
    if grid:
        if gt is None:
            raise ConfigurationError("grid search needs a simulated ground truth")
        best_tau, table = grid_search(solve, [float(t) for t in grid], gt)
        report.write_csv(rec_dir / "grid_mse.csv", table,
                         ["tau_reg", "mse", "iterations", "final_objective"])
        figures["grid"] = (table, best_tau)
        tau = best_tau
    else:
        tau = float(base.get("tau_reg", 0.0))

    result = solve(tau)
    metrics = {
        "method": f"baseline:{solver}",
        "tau_reg": tau,
        "iterations": result.iterations,
        "final_objective": result.objective,
        **init_info,
    }
    mse_val = _mse(result.image, gt)
    if mse_val is not None:
        metrics["mse"] = mse_val

    arrays = {"recon": result.image.reshape(shape), "s_init": s_init.reshape(shape)}
    panels = [("initial", s_init.reshape(shape)),
              (f"{solver} reconstruction", result.image.reshape(shape))]
    if gt is not None:
        panels.insert(0, ("ground truth", gt.reshape(shape)))
    figures["reconstruction"] = panels
    return metrics, arrays, figures
