"""Trainer CLI: run a training config and export the generator.

    wgan-trainer train --config config.json [--verbose]
    wgan-trainer profiles

The JSON config mirrors TrainConfig field for field; the ``profiles``
subcommand prints the shipped full-scale and desk-scale parameter sets as
ready-to-edit JSON.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from wgan_trainer.train import (
    DESK_DISC_PROFILE,
    DISC_PROFILE,
    MNIST_PROFILE,
    TrainConfig,
    train,
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wgan-trainer")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("train", help="train per a JSON config, export AGDP")
    run.add_argument("--config", required=True)
    run.add_argument("--verbose", action="store_true")
    sub.add_parser("profiles", help="print the shipped training profiles")
    args = parser.parse_args(argv)

    if args.command == "profiles":
        print(json.dumps({"discs_full": DISC_PROFILE, "mnist_full": MNIST_PROFILE,
                          "discs_desk": DESK_DISC_PROFILE}, indent=1))
        return 0

    with open(args.config) as fh:
        raw = json.load(fh)
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(raw) - known
    if unknown:
        print(f"unknown config keys: {sorted(unknown)}", file=sys.stderr)
        return 2
    if "adam_betas" in raw:
        raw["adam_betas"] = tuple(raw["adam_betas"])
    cfg = TrainConfig(**raw)
    _, _, history = train(cfg, verbose=args.verbose)
    print(f"trained {cfg.epochs} epochs; final critic loss "
          f"{history[-1]['critic_loss']:.4f}")
    if cfg.export_path:
        print(f"exported generator to {cfg.export_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
