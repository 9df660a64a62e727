"""Focal loss, negative sampling and the weighted multi-task objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .encoder import ContractViolation

EPS = 1e-7


@dataclass
class LossConfig:
    alpha: float = 0.75
    gamma: float = 0.0
    lambda_entity: float = 1.0
    lambda_adjacency: float = 0.0
    lambda_relation: float = 1.0
    negative_sample_rate: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        lambdas = (self.lambda_entity, self.lambda_adjacency, self.lambda_relation)
        if min(lambdas) < 0 or max(lambdas) <= 0:
            raise ValueError("loss weights must be nonnegative with at least one positive")
        if not 0.0 < self.negative_sample_rate <= 1.0:
            raise ValueError(f"negative_sample_rate must lie in (0, 1], got {self.negative_sample_rate}")


def focal_loss(probability, label, alpha: float = 0.75, gamma: float = 0.0):
    """Elementwise ``-alpha_t (1 - p_t)^gamma log(p_t)``.

    ``alpha`` weights positives and ``1 - alpha`` negatives. Works on floats
    or tensors; probabilities are clamped to ``[1e-7, 1 - 1e-7]``.
    """
    if isinstance(probability, torch.Tensor):
        p = probability.clamp(EPS, 1 - EPS)
        y = torch.as_tensor(label, dtype=p.dtype, device=p.device)
        p_t = y * p + (1 - y) * (1 - p)
        alpha_t = y * alpha + (1 - y) * (1 - alpha)
        weight = (1 - p_t) ** gamma if gamma else 1.0
        return -alpha_t * weight * torch.log(p_t)
    p = min(max(float(probability), EPS), 1 - EPS)
    p_t = p if label == 1 else 1 - p
    alpha_t = alpha if label == 1 else 1 - alpha
    return -alpha_t * (1 - p_t) ** gamma * float(np.log(p_t))


def negative_sample(labels, rate: float, seed: Optional[int] = None, generator: Optional[np.random.Generator] = None):
    """Mask keeping every positive and each negative with probability ``rate``."""
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    is_tensor = isinstance(labels, torch.Tensor)
    y = labels.detach().cpu().numpy() if is_tensor else np.asarray(labels)
    if rate >= 1.0:
        keep = np.ones(y.shape, dtype=bool)
    else:
        rng = generator if generator is not None else np.random.default_rng(seed)
        keep = (y > 0) | (rng.random(y.shape) < rate)
    return torch.from_numpy(keep).to(labels.device) if is_tensor else keep


def mean_focal_loss(probs: torch.Tensor, targets: torch.Tensor, mask: Optional[torch.Tensor],
                    config: LossConfig) -> torch.Tensor:
    """Mean focal loss over the cells selected by ``mask`` (all cells when None).

    Component losses are pooled over every scored cell in a batch, so an
    example contributes in proportion to its number of candidates.
    """
    if probs.shape != targets.shape:
        raise ContractViolation(f"scores {tuple(probs.shape)} and targets {tuple(targets.shape)} differ")
    if mask is not None and mask.shape != probs.shape:
        raise ContractViolation(f"mask {tuple(mask.shape)} does not match scores {tuple(probs.shape)}")
    if probs.numel() == 0:
        return probs.new_zeros(())
    losses = focal_loss(probs, targets.to(probs.dtype), config.alpha, config.gamma)
    if mask is None:
        return losses.mean()
    mask = mask.to(torch.bool)
    if not mask.any():
        return probs.new_zeros(())
    return losses[mask].mean()


def entity_loss(logits: torch.Tensor, targets: torch.Tensor, mask: Optional[torch.Tensor], config: LossConfig):
    """Mean focal loss over the (spans x entity types) grid."""
    return mean_focal_loss(torch.sigmoid(logits), targets, mask, config)


def relation_loss(logits: torch.Tensor, targets: torch.Tensor, mask: Optional[torch.Tensor], config: LossConfig):
    """Mean focal loss over the (pairs x relation types) grid."""
    return mean_focal_loss(torch.sigmoid(logits), targets, mask, config)


def adjacency_loss(adjacency: torch.Tensor, targets: torch.Tensor, mask: Optional[torch.Tensor], config: LossConfig):
    """Mean focal loss on adjacency probabilities; the diagonal is never scored."""
    n = adjacency.shape[0]
    off_diag = ~torch.eye(n, dtype=torch.bool, device=adjacency.device)
    mask = off_diag if mask is None else (mask.to(torch.bool) & off_diag)
    return mean_focal_loss(adjacency, targets, mask, config)


def total_loss(l_ent, l_adj, l_rel, config: LossConfig):
    return config.lambda_entity * l_ent + config.lambda_adjacency * l_adj + config.lambda_relation * l_rel
