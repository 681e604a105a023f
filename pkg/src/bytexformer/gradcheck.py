"""Central finite-difference check of the model's analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import torch

from . import objectives
from .model import ByteTransformer, ModelConfig, backward
from .training import encode_records, generate_synthetic

STEP = 1e-5
TOLERANCE = 1e-4
# norm floor for tensors whose true gradient is structurally zero (e.g. key
# biases, which shift every score of a softmax row equally)
ABS_FLOOR = 1e-6


def tiny_config(**kw) -> ModelConfig:
    base = dict(n_layers=2, context_n=16, d_model=8, d_ff=16, n_heads=2, dropout_p=0.0)
    base.update(kw)
    return ModelConfig(**base)


@dataclass
class GradCheckResult:
    loss: str
    max_rel_error: float
    worst_param: str
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    """Norm-wise relative error ||a - n|| / max(||a||, ||n||, floor) of one tensor."""
    denom = max(float(analytic.norm()), float(numeric.norm()), ABS_FLOOR)
    return float((analytic - numeric).norm()) / denom


def _build(seed: int, config: Optional[ModelConfig] = None, n_samples: int = 2):
    torch.manual_seed(seed)
    cfg = config or tiny_config()
    model = ByteTransformer(cfg).double().eval()
    records = generate_synthetic(max(n_samples, 4), 0.5, seed)
    pos = [r for r in records if r.label == 1]
    neg = [r for r in records if r.label == 0]
    records = (pos[:1] + neg[:1] + pos[1:] + neg[1:])[:n_samples]
    ids, lengths, targets = encode_records(records, cfg.context_n)
    labels = torch.tensor([float(r.label) for r in records], dtype=torch.float64)
    return model, (ids, lengths, targets, labels)


def _losses(model, batch):
    ids, lengths, targets, labels = batch
    out = model(ids, lengths, mode="eval")
    return (objectives.classification_loss(out.cls_score, labels),
            objectives.next_char_loss(out.next_char_logits, targets, lengths))


def run_gradcheck(seed: int = 0, config: Optional[ModelConfig] = None,
                  n_samples: int = 2) -> Dict[str, GradCheckResult]:
    """Check classification, next-char and balanced-mixed gradients.

    The mixed multipliers are computed once at the unperturbed point and held
    fixed for both the analytic and the numeric side.
    """
    model, batch = _build(seed, config, n_samples)
    l_cls, l_next = _losses(model, batch)
    alpha, beta = objectives.balance_multipliers([l_cls.item(), l_next.item()],
                                                 objectives.LossBalanceSpec())
    analytic = {
        "cls": backward(l_cls, model),
        "next": backward(_losses(model, batch)[1], model),
    }
    analytic["mixed"] = objectives.combine_gradients([analytic["cls"], analytic["next"]],
                                                     [alpha, beta])

    results = {k: GradCheckResult(k, 0.0, "", 0) for k in analytic}
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            numeric = {k: torch.empty(flat.numel(), dtype=torch.float64) for k in analytic}
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + STEP
                c_plus, n_plus = (x.item() for x in _losses(model, batch))
                flat[i] = orig - STEP
                c_minus, n_minus = (x.item() for x in _losses(model, batch))
                flat[i] = orig
                dc = (c_plus - c_minus) / (2 * STEP)
                dn = (n_plus - n_minus) / (2 * STEP)
                numeric["cls"][i] = dc
                numeric["next"][i] = dn
                numeric["mixed"][i] = alpha * dc + beta * dn
            for k, res in results.items():
                err = relative_error(analytic[k][name].reshape(-1), numeric[k])
                worst = err
                res.n_checked += flat.numel()
                if worst > res.max_rel_error:
                    res.max_rel_error, res.worst_param = worst, name
    return results
