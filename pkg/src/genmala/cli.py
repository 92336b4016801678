"""Command-line entry point.

Subcommands map one-to-one onto module entry points:

    simulate      draw ground truth, simulate noisy measurements
    reconstruct   run the MALA or baseline pipeline on simulated data
    init-latent   fit the latent start for a given initial image
    adjoint-test  check every configured operator's adjoint identity
    grid-search   baseline solve over a regularization grid
    model-info    summarize an AGDP weight file

Exit codes: 0 success, 2 configuration error, 3 numerical error,
4 I/O or weight-file error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from genmala import agdp
from genmala.arrayio import save_array
from genmala.config import load_config
from genmala.exceptions import (
    ConfigurationError,
    InitializationError,
    ModelLoadError,
    NumericalError,
)
from genmala.operators import adjoint_check, compose
from genmala.generator import decoder_op
from genmala.pipelines import build_forward, run_reconstruct, run_simulate
from genmala.posterior import init_latent

ADJOINT_TOLERANCE = 1e-5


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genmala",
        description="Bayesian image reconstruction with generative priors",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("simulate", "simulate measurements from a ground-truth source"),
        ("reconstruct", "reconstruct from simulated measurements"),
        ("init-latent", "fit the latent starting point for an initial image"),
        ("adjoint-test", "verify operator adjoints by finite differences"),
        ("grid-search", "baseline reconstruction over a regularization grid"),
        ("model-info", "summarize an AGDP weight file"),
    ]:
        cmd = sub.add_parser(name, help=helptext)
        if name == "model-info":
            cmd.add_argument("weights", help="AGDP weight file")
        else:
            cmd.add_argument("--config", required=True, help="experiment JSON config")
            cmd.add_argument("--output", default=None, help="output directory")
        cmd.add_argument("--seed", type=int, default=None, help="override config seed")
        cmd.add_argument("--threads", type=int, default=1, help="worker threads")
        cmd.add_argument("--verbose", action="store_true")
    return parser


def _output_dir(cfg: dict, args) -> Path:
    out = args.output or cfg.get("output_dir")
    if out is None:
        raise ConfigurationError("no output directory: set --output or config output_dir")
    return Path(out)


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    info = run_simulate(cfg, _output_dir(cfg, args), seed=args.seed,
                        threads=args.threads)
    if args.verbose:
        print(f"wrote {info['m']} measurements for {info['k']} pixels "
              f"to {info['measurements_dir']}")
    return 0


def _cmd_reconstruct(args) -> int:
    cfg = load_config(args.config, for_reconstruction=True)
    metrics = run_reconstruct(cfg, _output_dir(cfg, args), seed=args.seed,
                              threads=args.threads)
    for key, value in metrics.items():
        print(f"{key}={value}")
    return 0


def _cmd_grid_search(args) -> int:
    cfg = load_config(args.config, for_reconstruction=True)
    if cfg.get("method") != "baseline" or not (cfg.get("baseline") or {}).get("grid"):
        raise ConfigurationError("grid-search needs method=baseline and baseline.grid")
    metrics = run_reconstruct(cfg, _output_dir(cfg, args), seed=args.seed,
                              threads=args.threads)
    for key, value in metrics.items():
        print(f"{key}={value}")
    return 0


def _cmd_init_latent(args) -> int:
    cfg = load_config(args.config, for_reconstruction=True)
    if cfg.get("method") != "mala":
        raise ConfigurationError("init-latent needs method=mala and a prior")
    out_root = _output_dir(cfg, args)
    prior = agdp.load_model(cfg["prior"]["weights"])

    from genmala.arrayio import load_array
    from genmala.pipelines import _initial_image

    a, op, shape = build_forward(cfg, args.threads)
    y = load_array(out_root / "measurements" / "y.arr")
    if cfg["noise"]["kind"] == "poisson":
        y = y.astype(np.float64)
    s_init, _ = _initial_image(cfg, a, op, y, shape)
    init_cfg = cfg.get("init") or {}
    z = init_latent(prior, s_init,
                    iters=int(init_cfg.get("latent_iters", 300)),
                    step=float(init_cfg.get("latent_step", 1e-3)),
                    restarts=int(init_cfg.get("restarts", 10)),
                    seed=args.seed if args.seed is not None else int(cfg.get("seed", 0)))
    init_dir = out_root / "init"
    init_dir.mkdir(parents=True, exist_ok=True)
    save_array(z, init_dir / "z_init.arr")
    print(f"z_init_norm={float(np.linalg.norm(z))}")
    return 0


def _cmd_adjoint_test(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    _, op, _ = build_forward(cfg, args.threads)
    checks = {"forward": op}
    if (cfg.get("prior") or {}).get("weights"):
        prior_op = decoder_op(agdp.load_model(cfg["prior"]["weights"]))
        checks["prior"] = prior_op
        if prior_op.out_dim == op.in_dim:
            checks["composition"] = compose(op, prior_op)
    worst = 0.0
    for name, target in checks.items():
        defect = adjoint_check(target, trials=10, seed=seed)
        worst = max(worst, defect)
        print(f"adjoint_defect_{name}={defect:.3e}")
    print(f"tolerance={ADJOINT_TOLERANCE:.1e}")
    if worst > ADJOINT_TOLERANCE:
        raise NumericalError(f"adjoint defect {worst:.3e} exceeds {ADJOINT_TOLERANCE}")
    return 0


def _cmd_model_info(args) -> int:
    info = agdp.model_info(args.weights)
    print(json.dumps(info, indent=1, default=str))
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "reconstruct": _cmd_reconstruct,
    "init-latent": _cmd_init_latent,
    "adjoint-test": _cmd_adjoint_test,
    "grid-search": _cmd_grid_search,
    "model-info": _cmd_model_info,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, InitializationError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (ModelLoadError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
