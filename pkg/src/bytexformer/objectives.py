"""Classification and next-character losses, and their balanced combination.

The balanced combination rescales each component so that it contributes a
fixed fraction of the mixed loss at every minibatch:

    gamma_i = c_i * sum_j(L_j) / L_i,    mixed = sum_i gamma_i * L_i

The multipliers are constants for differentiation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import torch
import torch.nn.functional as F

from .errors import TargetOutOfRange
from .tokenizer import IGNORE

SCORE_EPS = 1e-12


@dataclass
class LossBalanceSpec:
    fractions: List[float] = field(default_factory=lambda: [0.5, 0.5])
    normalize: bool = True

    def __post_init__(self):
        self.fractions = [float(c) for c in self.fractions]
        if not self.fractions or any(c < 0 for c in self.fractions) or sum(self.fractions) <= 0:
            raise ValueError("fractions must be nonnegative with a positive sum")

    @property
    def weights(self) -> List[float]:
        if not self.normalize:
            return list(self.fractions)
        s = math.fsum(self.fractions)
        return [c / s for c in self.fractions]


@dataclass
class BalancedLossResult:
    component_losses: List[float]
    multipliers: List[float]
    total: float
    iteration: int = 0
    all_zero: bool = False


def classification_loss(score, label) -> torch.Tensor:
    """Mean binary cross-entropy of sigmoid scores against {0, 1} labels."""
    if not torch.is_tensor(score) or not score.is_floating_point():
        score = torch.as_tensor(score, dtype=torch.get_default_dtype())
    label = torch.as_tensor(label, dtype=score.dtype)
    h = score.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
    per = -(label * torch.log(h) + (1.0 - label) * torch.log1p(-h))
    return per.mean()


def classification_loss_from_logits(logit: torch.Tensor, label) -> torch.Tensor:
    """Same loss as :func:`classification_loss` evaluated on the pre-sigmoid
    logit.  Stays accurate when the score saturates, which matters because the
    balancing multiplier divides by this value."""
    label = torch.as_tensor(label, dtype=logit.dtype)
    return (F.softplus(logit) - label * logit).mean()


def next_char_loss(logits: torch.Tensor, targets: torch.Tensor,
                   lengths: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Per-sample cross-entropy averaged over the M labelled positions, then
    averaged over the batch.  ``logits`` is (B, N, V), ``targets`` (B, N)."""
    if logits.dim() == 2:
        logits, targets = logits.unsqueeze(0), targets.unsqueeze(0)
        lengths = None if lengths is None else torch.as_tensor(lengths).view(1)
    targets = torch.as_tensor(targets, dtype=torch.long)
    valid = targets != IGNORE
    if bool(((targets < 0) & valid).any()) or bool((targets >= logits.shape[-1]).any()):
        raise TargetOutOfRange("target id outside the output vocabulary")
    logp = F.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, targets.clamp(min=0).unsqueeze(-1)).squeeze(-1)
    picked = torch.where(valid, picked, torch.zeros_like(picked))
    count = valid.sum(dim=1) if lengths is None else torch.as_tensor(lengths)
    return (-(picked.sum(dim=1)) / count.to(logits.dtype)).mean()


def balance_multipliers(losses: Sequence[float], spec: LossBalanceSpec) -> List[float]:
    """gamma_i = c_i * sum(L) / L_i; a zero component gets multiplier 1."""
    losses = [float(x) for x in losses]
    weights = spec.weights
    if len(losses) != len(weights):
        raise ValueError(f"{len(losses)} losses for {len(weights)} fractions")
    if any(x < 0 for x in losses):
        raise ValueError("losses must be nonnegative")
    total = sum(losses)
    return [1.0 if x == 0.0 else c * total / x for c, x in zip(weights, losses)]


def mixed_loss(losses: Sequence[torch.Tensor], spec: LossBalanceSpec, iteration: int = 0):
    """Combine component losses with frozen balancing multipliers.

    Returns ``(total, result)`` where ``total`` is differentiable with the
    multipliers held constant and ``result`` records the values.
    """
    values = [x.item() for x in losses]
    all_zero = all(v == 0.0 for v in values)
    gammas = [1.0] * len(values) if all_zero else balance_multipliers(values, spec)
    total = sum(g * x for g, x in zip(gammas, losses))
    result = BalancedLossResult(component_losses=values, multipliers=gammas,
                                total=total.item(), iteration=iteration,
                                all_zero=all_zero)
    return total, result


def combine_gradients(grads: Sequence[dict], multipliers: Sequence[float]) -> dict:
    """sum_i gamma_i * grad_i, per named tensor."""
    out = {}
    for name in grads[0]:
        out[name] = sum(g * gr[name] for g, gr in zip(multipliers, grads))
    return out
