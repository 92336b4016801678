"""WGAN-GP training loop.

The critic ascends the Wasserstein surrogate E[D(x)] - E[D(G(z))] while
descending the gradient penalty lambda_gp * (||grad_w D(w)|| - 1)^2, with
w sampled uniformly along segments between real and generated batches.
For each generator step the critic takes n_critic steps; the generator
then descends -E[D(G(z))].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

from wgan_trainer import models
from wgan_trainer.datasets import make_disc_dataset, load_mnist_images


@dataclass
class TrainConfig:
    dataset: str = "discs"  # "discs" | "mnist"
    dataset_size: int = 500
    dataset_path: Optional[str] = None  # IDX file for mnist
    epochs: int = 2
    batch_size: int = 64
    optimizer: str = "rmsprop"  # "rmsprop" | "adam"
    learning_rate: float = 5e-5
    adam_betas: tuple = (0.5, 0.999)
    lambda_gp: float = 10.0
    n_critic: int = 5
    latent_dim: int = 128
    width: float = 1.0  # channel-width multiplier (1.0 = full scale)
    normalized: bool = True
    seed: int = 0
    scale_cap: Optional[float] = 0.2  # exported with the augmented flag
    export_path: Optional[str] = None
    loss_csv: Optional[str] = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")
        if self.lambda_gp < 0:
            raise ValueError("lambda_gp must be non-negative")
        if self.n_critic < 1:
            raise ValueError("n_critic must be positive")


# full-scale training profiles matching the published experiments
DISC_PROFILE = dict(dataset="discs", dataset_size=50_000, epochs=1250,
                    batch_size=64, optimizer="rmsprop", learning_rate=5e-5,
                    lambda_gp=10.0, n_critic=5, latent_dim=128, width=1.0,
                    normalized=True, scale_cap=0.2)
MNIST_PROFILE = dict(dataset="mnist", dataset_size=50_000, epochs=750,
                     batch_size=64, optimizer="adam", learning_rate=2e-4,
                     adam_betas=(0.5, 0.999), lambda_gp=10.0, n_critic=5,
                     latent_dim=100, width=1.0, normalized=True, scale_cap=0.5)
# desk-scale smoke profile: minutes on a laptop CPU
DESK_DISC_PROFILE = dict(DISC_PROFILE, dataset_size=500, epochs=2, width=0.05)


def segment_interpolates(real: torch.Tensor, fake: torch.Tensor,
                         alpha: torch.Tensor) -> torch.Tensor:
    """Points alpha*x + (1-alpha)*G(z) on segments between sample pairs."""
    alpha = alpha.view((real.shape[0],) + (1,) * (real.dim() - 1))
    return alpha * real + (1.0 - alpha) * fake


def gradient_penalty(critic: nn.Module, real: torch.Tensor,
                     fake: torch.Tensor, lambda_gp: float) -> torch.Tensor:
    """lambda_gp * mean((||grad_w D(w)|| - 1)^2) on segment interpolates."""
    alpha = torch.rand(real.shape[0], device=real.device)
    w = segment_interpolates(real, fake, alpha).requires_grad_(True)
    scores = critic(w)
    grads = torch.autograd.grad(outputs=scores.sum(), inputs=w,
                                create_graph=True)[0]
    norms = grads.reshape(grads.shape[0], -1).norm(dim=1)
    return lambda_gp * ((norms - 1.0) ** 2).mean()


def critic_update(batch: torch.Tensor, generator: nn.Module, critic: nn.Module,
                  optimizer: torch.optim.Optimizer, cfg: TrainConfig) -> float:
    """One critic ascent step; returns the batch surrogate loss.

    The reported scalar is mean(D(x) - D(G(z))) + the penalty term; the
    parameter step ascends the Wasserstein part and descends the penalty.
    """
    z = torch.randn(batch.shape[0], cfg.latent_dim, device=batch.device)
    with torch.no_grad():
        fake = generator(models.generator_input(generator, z))
    wasserstein = critic(batch).mean() - critic(fake).mean()
    penalty = gradient_penalty(critic, batch, fake, cfg.lambda_gp) \
        if cfg.lambda_gp > 0 else torch.zeros((), device=batch.device)

    optimizer.zero_grad(set_to_none=True)
    (-(wasserstein) + penalty).backward()
    optimizer.step()
    loss = float((wasserstein + penalty).item())
    if not math.isfinite(loss):
        raise RuntimeError("critic loss became non-finite; training aborted")
    return loss


def generator_update(generator: nn.Module, critic: nn.Module,
                     optimizer: torch.optim.Optimizer, cfg: TrainConfig,
                     batch_size: int) -> float:
    """One generator descent step on -mean(D(G(z))); returns the loss."""
    device = next(generator.parameters()).device
    z = torch.randn(batch_size, cfg.latent_dim, device=device)
    loss = -critic(generator(models.generator_input(generator, z))).mean()
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    value = float(loss.item())
    if not math.isfinite(value):
        raise RuntimeError("generator loss became non-finite; training aborted")
    return value


def _build_models(cfg: TrainConfig):
    if cfg.dataset == "discs":
        gen = models.build_disc_generator(cfg.latent_dim, cfg.width)
        critic = models.build_disc_critic(cfg.width)
    elif cfg.dataset == "mnist":
        gen = models.build_mnist_generator(cfg.latent_dim, cfg.width)
        critic = models.build_mnist_critic(cfg.width)
    else:
        raise ValueError(f"unknown dataset {cfg.dataset!r}")
    return gen, critic


def _build_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "rmsprop":
        return torch.optim.RMSprop(params, lr=cfg.learning_rate)
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.learning_rate,
                                betas=tuple(cfg.adam_betas))
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


def _load_data(cfg: TrainConfig) -> torch.Tensor:
    if cfg.dataset == "discs":
        data = make_disc_dataset(cfg.dataset_size, cfg.normalized, cfg.seed)
    else:
        if cfg.dataset_path is None:
            raise ValueError("mnist training needs dataset_path (IDX file)")
        data = load_mnist_images(cfg.dataset_path, limit=cfg.dataset_size)
    return torch.from_numpy(np.ascontiguousarray(data))


def train(cfg: TrainConfig, verbose: bool = False):
    """Full training run; returns (generator, critic, loss history rows)."""
    torch.manual_seed(cfg.seed)
    data = _load_data(cfg)
    generator, critic = _build_models(cfg)
    generator.train()
    critic.train()
    opt_g = _build_optimizer(generator.parameters(), cfg)
    opt_c = _build_optimizer(critic.parameters(), cfg)

    history = []
    rng = np.random.default_rng(cfg.seed)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(data.shape[0])
        batches = [order[i:i + cfg.batch_size]
                   for i in range(0, len(order), cfg.batch_size)]
        critic_losses, gen_losses = [], []
        pending = 0
        for idx in batches:
            batch = data[idx]
            critic_losses.append(critic_update(batch, generator, critic, opt_c, cfg))
            pending += 1
            if pending == cfg.n_critic:
                gen_losses.append(generator_update(generator, critic, opt_g, cfg,
                                                   cfg.batch_size))
                pending = 0
            step += 1
        if pending:
            gen_losses.append(generator_update(generator, critic, opt_g, cfg,
                                               cfg.batch_size))
        row = {
            "epoch": epoch,
            "critic_loss": float(np.mean(critic_losses)),
            "generator_loss": float(np.mean(gen_losses)) if gen_losses else 0.0,
        }
        history.append(row)
        if verbose:
            print(f"epoch {epoch}: critic {row['critic_loss']:.4f} "
                  f"generator {row['generator_loss']:.4f}")

    generator.eval()
    if cfg.loss_csv:
        with open(cfg.loss_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "critic_loss",
                                                    "generator_loss"])
            writer.writeheader()
            writer.writerows(history)
    if cfg.export_path:
        from wgan_trainer.export import export_agdp

        export_agdp(generator, cfg.scale_cap, cfg.export_path)
    return generator, critic, history
