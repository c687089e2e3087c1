"""Adam optimizer and the seeded training loop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import GradientStore, Parameter
from .model import Model

__all__ = ["TrainConfig", "Adam", "train"]


@dataclass
class TrainConfig:
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


class Adam:
    def __init__(self, params: list[Parameter], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def step(self, grads: GradientStore, scale: float = 1.0) -> None:
        cfg = self.cfg
        self.t += 1
        bias1 = 1.0 - cfg.beta1**self.t
        bias2 = 1.0 - cfg.beta2**self.t
        for i, p in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                continue
            g = g * scale
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g
            p.value = p.value - cfg.lr * (self.m[i] / bias1) / (
                np.sqrt(self.v[i] / bias2) + cfg.eps
            )


def train(model: Model, dataset, cfg: TrainConfig) -> list[float]:
    """Optimize in place; returns the per-epoch mean sample loss.

    Deterministic given (model, dataset, cfg.seed): the only randomness is the
    seeded epoch shuffle.  The epoch loss is total loss / n_samples, so it is
    independent of the shuffle whenever the parameters do not move (lr=0).
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(model.parameters(), cfg)
    n = len(dataset)
    history = []
    sample_loss = np.empty(n)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grads = GradientStore()
            for idx in batch:
                x, y = dataset[idx]
                loss, _, _ = model.loss_and_gradients(x, y, grads=grads)
                sample_loss[idx] = loss
            optimizer.step(grads, scale=1.0 / len(batch))
        # reduce in dataset order so the history does not depend on the shuffle
        history.append(float(sample_loss.sum()) / n)
    return history
