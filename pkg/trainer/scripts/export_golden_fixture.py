#!/usr/bin/env python3
"""Train a tiny disc generator and export it as the engine's golden fixture.

The committed fixture then genuinely crosses the component boundary:
written by the torch exporter here, read back by the inference engine's
own loader in its test suite.
"""

from pathlib import Path

import torch

from wgan_trainer.train import TrainConfig, train

OUT = (Path(__file__).resolve().parent.parent.parent
       / "tests" / "fixtures" / "golden_generator.agdp")


def main():
    cfg = TrainConfig(
        dataset="discs",
        dataset_size=96,
        epochs=1,
        batch_size=32,
        latent_dim=16,
        width=0.02,
        seed=2024,
        scale_cap=0.2,
        export_path=str(OUT),
    )
    torch.manual_seed(cfg.seed)
    train(cfg, verbose=True)
    print(f"wrote {OUT} ({OUT.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
