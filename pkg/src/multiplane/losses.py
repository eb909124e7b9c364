"""Hybrid objective: cross-entropy plus a ramped position-alignment term.

The alignment (SLC) loss pushes each position's attention weight toward
that position's true-class softmax probability; it enters the total loss
through a schedule that is zero for the first `ramp_start_epoch` epochs
and then either ramps linearly over `ramp_steps` epochs (smoothed mode)
or jumps to full weight at once (step mode).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

PROB_EPS = 1e-12


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.2
    ramp_start_epoch: int = 20
    ramp_steps: int = 20
    mode: str = "smoothed"  # or "step"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.ramp_steps < 1:
            raise ValueError("ramp_steps must be >= 1")
        if self.mode not in ("smoothed", "step"):
            raise ValueError(f"unknown loss mode {self.mode!r}")


def _check_labels(labels: np.ndarray):
    if not np.isin(labels, (0, 1)).all():
        raise ValueError(f"labels must be 0 or 1, got {labels}")


def ce_loss(probs: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy; `probs` are class-1 probabilities per subject."""
    labels = np.asarray(labels, dtype=np.float64)
    _check_labels(labels)
    if probs.shape != labels.shape:
        raise T.ShapeError(f"ce_loss: probs {probs.shape} vs labels {labels.shape}")
    y = T.clamp(probs, PROB_EPS, 1.0 - PROB_EPS)
    pos = T.mul(Tensor(labels), T.log(y))
    neg = T.mul(Tensor(1.0 - labels), T.log(T.sub(Tensor(np.ones_like(labels)), y)))
    return T.mul(T.mean_over(T.add(pos, neg)), -1.0)


def slc_loss(patch_weights: Tensor, patch_logits: Tensor, label: int) -> Tensor:
    """sqrt of the summed squared gap between attention weights and the
    per-position true-class softmax probability (stable, max-subtracted)."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    n = patch_weights.shape[0]
    if patch_logits.shape != (n, 2):
        raise T.ShapeError(f"slc_loss: logits {patch_logits.shape} vs weights {patch_weights.shape}")
    probs = T.softmax(patch_logits, axis=1)
    onehot = np.zeros((n, 2))
    onehot[:, label] = 1.0
    p_true = T.sum_over(T.mul(probs, Tensor(onehot)), axes=(1,))
    diff = T.sub(patch_weights, p_true)
    return T.sqrt(T.sum_over(T.mul(diff, diff)))


def lambda_effective(epoch: int, cfg: LossConfig) -> float:
    """SLC weight at a 1-based epoch; the ramp begins after ramp_start_epoch."""
    if epoch < 1:
        raise ValueError("epoch is 1-based")
    if epoch <= cfg.ramp_start_epoch:
        return 0.0
    if cfg.mode == "step":
        return cfg.lam
    return cfg.lam * min((epoch - cfg.ramp_start_epoch) / cfg.ramp_steps, 1.0)


def total_loss(ce: Tensor, slc: Tensor, epoch: int, cfg: LossConfig) -> Tensor:
    lam = lambda_effective(epoch, cfg)
    if lam == 0.0:
        return ce
    return T.add(ce, T.mul(slc, lam))
