"""White-box feature-space attacks: FGSM and projected gradient ascent.

Both attacks maximize the multi-label BCE loss of the target model inside an
l-inf or l2 ball of radius epsilon around the clean input.  The l-inf step
direction is sign(g) (what single-step FGSM uses); the literal g/max|g|
normalization is available behind a flag.  The perturbation starts at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import Model

__all__ = ["AttackConfig", "AttackNumericsError", "project_lp", "fgsm", "pgd"]

L2 = 2.0
LINF = math.inf


class AttackNumericsError(RuntimeError):
    """The loss gradient turned non-finite during the attack."""


@dataclass(frozen=True)
class AttackConfig:
    norm: float  # 2.0 or math.inf
    epsilon: float
    alpha: float
    steps: int = 20
    seed: int = 0
    linf_normalized_step: bool = False

    def __post_init__(self) -> None:
        if self.norm not in (L2, LINF):
            raise ValueError(f"norm must be 2 or inf, got {self.norm}")
        if self.epsilon <= 0 or self.alpha <= 0:
            raise ValueError("epsilon and alpha must be positive")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")

    @classmethod
    def from_norm_name(cls, name: str, **kwargs) -> "AttackConfig":
        norms = {"linf": LINF, "l2": L2}
        if name not in norms:
            raise ValueError(f"unknown norm name {name!r}")
        return cls(norm=norms[name], **kwargs)


def project_lp(delta: np.ndarray, p: float, eps: float) -> np.ndarray:
    """Project onto the l_p ball of radius eps (p in {2, inf})."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if p == LINF:
        return np.clip(delta, -eps, eps)
    if p == L2:
        norm = float(np.linalg.norm(delta))
        if norm > eps:
            return delta * (eps / norm)
        return delta
    raise ValueError(f"norm must be 2 or inf, got {p}")


def fgsm(model: Model, x: np.ndarray, y: np.ndarray, eps: float) -> np.ndarray:
    """Single-step sign attack: x + eps * sign(grad_x loss)."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    _, grad = model.loss_and_input_gradient(x, y)
    if not np.isfinite(grad).all():
        raise AttackNumericsError("non-finite gradient in fgsm")
    return x + eps * np.sign(grad)


def pgd(model: Model, x: np.ndarray, y: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Iterated projected ascent; reduces bitwise to fgsm for one l-inf step of size eps."""
    x = np.asarray(x, dtype=np.float64)
    delta = np.zeros_like(x)
    for step in range(cfg.steps):
        _, grad = model.loss_and_input_gradient(x + delta, y)
        if not np.isfinite(grad).all():
            raise AttackNumericsError(f"non-finite gradient at step {step}")
        if cfg.norm == LINF:
            if cfg.linf_normalized_step:
                peak = float(np.abs(grad).max())
                direction = grad / peak if peak > 0 else grad
            else:
                direction = np.sign(grad)
        else:
            norm = float(np.linalg.norm(grad))
            direction = grad / norm if norm > 0 else grad
        delta = project_lp(delta + cfg.alpha * direction, cfg.norm, cfg.epsilon)
    return x + delta
