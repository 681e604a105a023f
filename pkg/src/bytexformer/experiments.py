"""Desk-scale regime comparison on synthetic URLs."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, Optional

import torch

from .evaluation import evaluate
from .model import ModelConfig
from .training import LabeledRecord, OptimizerConfig, RegimeConfig, generate_synthetic, run_regime


@dataclass
class DeskResult:
    test_auc: Dict[str, float] = field(default_factory=dict)
    seconds: Dict[str, float] = field(default_factory=dict)
    frozen_unchanged: Optional[bool] = None


def desk_model_config() -> ModelConfig:
    return ModelConfig(n_layers=4, context_n=128, d_model=32, d_ff=64, n_heads=4, dropout_p=0.1)


def run_desk_experiment(n_train: int = 10_000, n_test: int = 2_000, fraction: float = 0.2,
                        epochs: int = 3, finetune_epochs: int = 1, batch_size: int = 64,
                        freeze_layers: int = 3, seed: int = 0, log=print) -> DeskResult:
    train = generate_synthetic(n_train, fraction, seed + 1)
    test = generate_synthetic(n_test, fraction, seed + 2)
    mc = desk_model_config()
    result = DeskResult()

    for regime in ("DecodeToLabel", "MixedObjective"):
        t0 = time.time()
        rc = RegimeConfig(regime=regime, epochs=epochs, batch_size=batch_size, seed=seed,
                          keep_best_val=True)
        trained = run_regime(train, rc, mc)
        result.seconds[regime] = time.time() - t0
        result.test_auc[regime] = evaluate(trained.model, test).auc
        log(f"{regime}: test AUC {result.test_auc[regime]:.5f}, best epoch {trained.best_epoch} "
            f"({result.seconds[regime]:.0f}s)")

    t0 = time.time()
    corpus = [LabeledRecord(r.text) for r in train]
    pre = run_regime(train, RegimeConfig(regime="PretrainNextChar", epochs=1,
                                         batch_size=batch_size, seed=seed),
                     mc, pretrain_corpus=corpus)
    before = {n: p.detach().clone() for n, p in pre.model.named_parameters()}
    ft_cfg = RegimeConfig(regime="FineTune", epochs=finetune_epochs, batch_size=batch_size,
                          freeze_layers=freeze_layers, seed=seed,
                          optimizer=OptimizerConfig.finetune_sgd())
    ft = run_regime(train, ft_cfg, mc, initial_model=pre.model)
    frozen = [n for n in before if n.startswith(tuple(f"layers.{i}." for i in range(freeze_layers)))]
    params = dict(ft.model.named_parameters())
    result.frozen_unchanged = bool(frozen) and all(torch.equal(params[n], before[n]) for n in frozen)
    result.seconds["PretrainNextChar+FineTune"] = time.time() - t0
    result.test_auc["FineTune"] = evaluate(ft.model, test).auc
    log(f"PretrainNextChar+FineTune: test AUC {result.test_auc['FineTune']:.5f}, "
        f"frozen layers unchanged: {result.frozen_unchanged} "
        f"({result.seconds['PretrainNextChar+FineTune']:.0f}s)")
    return result
