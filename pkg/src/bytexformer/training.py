"""Training regimes, optimizers, balanced sampling and synthetic data.

Four regimes share one loop:

* ``DecodeToLabel``     classification loss only, from scratch
* ``PretrainNextChar``  next-character loss only, labels ignored
* ``FineTune``          classification loss from pretrained weights with the
                        lower attention blocks frozen
* ``MixedObjective``    balanced classification + next-character loss
"""

from __future__ import annotations

import enum
import json
import random
import string
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
import torch

from . import objectives
from .errors import (LabelRequired, MissingPretrainedParams, OddBatchSize,
                     SingleClassDataset)
from .model import ByteTransformer, ModelConfig, span_penalty
from .objectives import LossBalanceSpec
from .tokenizer import CLS_ID, IGNORE, PAD_ID


class Regime(str, enum.Enum):
    DECODE_TO_LABEL = "DecodeToLabel"
    PRETRAIN_NEXT_CHAR = "PretrainNextChar"
    FINE_TUNE = "FineTune"
    MIXED_OBJECTIVE = "MixedObjective"


@dataclass
class LabeledRecord:
    text: bytes
    label: Optional[int] = None

    def __post_init__(self):
        if isinstance(self.text, str):
            self.text = self.text.encode("latin-1")
        if not self.text:
            raise ValueError("record text must be non-empty")
        if self.label not in (None, 0, 1):
            raise ValueError(f"label must be 0, 1 or absent, got {self.label!r}")


@dataclass
class OptimizerConfig:
    kind: str = "Adam"
    learning_rate: float = 1e-3
    momentum: float = 0.0
    weight_decay: float = 0.0
    betas: List[float] = field(default_factory=lambda: [0.9, 0.999])
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("Adam", "SGD"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        self.betas = [float(b) for b in self.betas]

    @classmethod
    def byte_sgd(cls) -> "OptimizerConfig":
        return cls(kind="SGD", learning_rate=0.005, momentum=0.9, weight_decay=1e-4)

    @classmethod
    def finetune_sgd(cls) -> "OptimizerConfig":
        return cls(kind="SGD", learning_rate=1e-4)


@dataclass
class RegimeConfig:
    regime: Regime = Regime.DECODE_TO_LABEL
    epochs: int = 15
    batch_size: int = 512
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    freeze_layers: int = 16
    balance_spec: LossBalanceSpec = field(default_factory=LossBalanceSpec)
    balanced_batches: bool = False
    seed: int = 0
    val_fraction: float = 0.1
    sequential: bool = True
    # restore the parameters from the epoch with the highest validation AUC
    keep_best_val: bool = False

    def __post_init__(self):
        self.regime = Regime(self.regime)
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        if isinstance(self.balance_spec, dict):
            self.balance_spec = LossBalanceSpec(**self.balance_spec)
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")


# -- optimizers ----------------------------------------------------------------

@torch.no_grad()
def sgd_step(params: Dict[str, torch.Tensor], grads: Dict[str, torch.Tensor],
             config: OptimizerConfig, state: dict) -> dict:
    """v <- mu*v + g + wd*theta ; theta <- theta - lr*v (in place)."""
    velocity = state.setdefault("velocity", {})
    for name, p in params.items():
        g = grads[name]
        if config.weight_decay:
            g = g + config.weight_decay * p
        v = velocity.get(name)
        v = g.clone() if v is None else v.mul_(config.momentum).add_(g)
        velocity[name] = v
        p.sub_(config.learning_rate * v)
    state["step"] = state.get("step", 0) + 1
    return state


@torch.no_grad()
def adam_step(params: Dict[str, torch.Tensor], grads: Dict[str, torch.Tensor],
              config: OptimizerConfig, state: dict) -> dict:
    """Adam with bias correction; weight decay is added to the gradient."""
    b1, b2 = config.betas
    t = state.get("step", 0) + 1
    m_all = state.setdefault("exp_avg", {})
    v_all = state.setdefault("exp_avg_sq", {})
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if config.weight_decay:
            g = g + config.weight_decay * p
        m = m_all.setdefault(name, torch.zeros_like(p))
        v = v_all.setdefault(name, torch.zeros_like(p))
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        p.sub_(config.learning_rate * (m / c1) / ((v / c2).sqrt() + config.eps))
    state["step"] = t
    return state


def optimizer_step(params, grads, config: OptimizerConfig, state: dict) -> dict:
    if config.kind == "SGD":
        return sgd_step(params, grads, config, state)
    return adam_step(params, grads, config, state)


# -- sampling ------------------------------------------------------------------

def balanced_batches(labels: Sequence[int], batch_size: int, seed: int,
                     n_batches: Optional[int] = None) -> Iterator[List[int]]:
    """Yield index batches with exactly batch_size/2 of each class.

    The majority class is walked once per epoch without replacement; the
    minority class is reshuffled and recycled whenever it runs out.  With
    ``n_batches`` unset, one epoch is len(majority) // (batch_size/2) batches.
    """
    if batch_size % 2:
        raise OddBatchSize(f"batch_size {batch_size} is odd")
    labels = list(labels)
    pos = [i for i, y in enumerate(labels) if y == 1]
    neg = [i for i, y in enumerate(labels) if y == 0]
    if not pos or not neg:
        raise SingleClassDataset("both classes are required for balanced batches")
    half = batch_size // 2
    rng = random.Random(seed)
    if n_batches is None:
        n_batches = max(1, max(len(pos), len(neg)) // half)

    def cycler(pool):
        while True:
            order = list(pool)
            rng.shuffle(order)
            yield from order

    pos_it, neg_it = cycler(pos), cycler(neg)
    for _ in range(n_batches):
        batch = [next(pos_it) for _ in range(half)] + [next(neg_it) for _ in range(half)]
        rng.shuffle(batch)
        yield batch


def shuffled_batches(n: int, batch_size: int, seed: int) -> List[List[int]]:
    order = np.random.RandomState(seed).permutation(n).tolist()
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


# -- synthetic data --------------------------------------------------------------

_WORDS = (
    "home news shop mail login account search images video music blog docs "
    "help about contact support store cart product item user profile static "
    "assets media cloud data files open team world city market sport travel "
    "food health money games books school bank tech web app api forum wiki"
).split()
_TLDS = ("com", "org", "net", "io", "edu", "co", "info")
_RANDOM_CHARS = string.ascii_letters + string.digits


def generate_synthetic(n: int, malicious_fraction: float, seed: int) -> List[LabeledRecord]:
    """URL-like records; malicious ones carry a 12-24 char random segment in the path."""
    if not 0 < malicious_fraction < 1:
        raise ValueError("malicious_fraction must lie in (0, 1)")
    rng = random.Random(seed)
    n_bad = int(round(n * malicious_fraction))
    labels = [1] * n_bad + [0] * (n - n_bad)
    rng.shuffle(labels)
    records = []
    for label in labels:
        scheme = rng.choice(("http", "https"))
        host_parts = [rng.choice(_WORDS) for _ in range(rng.randint(1, 2))]
        host = ".".join((["www"] if rng.random() < 0.5 else []) + host_parts + [rng.choice(_TLDS)])
        path = [rng.choice(_WORDS) for _ in range(rng.randint(0, 3))]
        if rng.random() < 0.3:
            path.append(f"{rng.choice(_WORDS)}{rng.randint(1, 999)}.html")
        if label:
            blob = "".join(rng.choice(_RANDOM_CHARS) for _ in range(rng.randint(12, 24)))
            path.insert(rng.randint(0, len(path)), blob)
        url = f"{scheme}://{host}/" + "/".join(path)
        records.append(LabeledRecord(text=url.encode("ascii")[:255], label=label))
    return records


# -- dataset files -----------------------------------------------------------------

def text_to_json(data: bytes) -> str:
    # one code point per byte; json escapes the non-ASCII ones as \u00XX
    return data.decode("latin-1")


def write_jsonl(records: Sequence[LabeledRecord], path):
    with open(path, "w", encoding="ascii") as fh:
        for r in records:
            obj = {"text": text_to_json(r.text)}
            if r.label is not None:
                obj["label"] = r.label
            fh.write(json.dumps(obj) + "\n")


def read_jsonl(path) -> List[LabeledRecord]:
    out = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append(LabeledRecord(text=obj["text"].encode("latin-1"),
                                         label=obj.get("label")))
    return out


_ABSENT = 255


def write_raw(records: Sequence[LabeledRecord], path):
    """Length-prefixed binary records: u32 length, bytes, u8 label (255 = absent)."""
    with open(path, "wb") as fh:
        for r in records:
            fh.write(len(r.text).to_bytes(4, "little"))
            fh.write(r.text)
            fh.write(bytes([_ABSENT if r.label is None else r.label]))


def read_raw(path) -> List[LabeledRecord]:
    out = []
    with open(path, "rb") as fh:
        raw = fh.read()
    i = 0
    while i < len(raw):
        n = int.from_bytes(raw[i:i + 4], "little")
        text = raw[i + 4:i + 4 + n]
        label = raw[i + 4 + n]
        out.append(LabeledRecord(text=text, label=None if label == _ABSENT else label))
        i += n + 5
    return out


def read_dataset(path) -> List[LabeledRecord]:
    return read_raw(path) if str(path).endswith((".bin", ".raw")) else read_jsonl(path)


# -- tensors ----------------------------------------------------------------------

def encode_records(records: Sequence[LabeledRecord], context_n: int):
    """Truncate to N-1 bytes and lay out as (ids, lengths, targets) tensors."""
    n = len(records)
    ids = torch.full((n, context_n), PAD_ID, dtype=torch.long)
    lengths = torch.empty(n, dtype=torch.long)
    for i, r in enumerate(records):
        data = r.text[: context_n - 1]
        m = len(data)
        ids[i, :m] = torch.tensor(list(data), dtype=torch.long)
        ids[i, m] = CLS_ID
        lengths[i] = m
    targets = torch.full_like(ids, IGNORE)
    targets[:, :-1] = ids[:, 1:]
    pos = torch.arange(context_n).unsqueeze(0)
    targets[pos >= lengths.unsqueeze(1)] = IGNORE
    return ids, lengths, targets


def split_validation(n: int, val_fraction: float, seed: int):
    order = np.random.RandomState(seed).permutation(n)
    n_val = int(n * val_fraction)
    cut = n - n_val
    return sorted(order[:cut].tolist()), sorted(order[cut:].tolist())


# -- training loop ---------------------------------------------------------------------

@dataclass
class TrainResult:
    model: ByteTransformer
    optimizer_state: dict
    metrics: List[dict]
    best_epoch: Optional[int] = None


def _labels(records) -> List[int]:
    labels = [r.label for r in records]
    if any(y is None for y in labels):
        raise LabelRequired("this regime needs labelled records")
    return labels


def compute_losses(model: ByteTransformer, ids, lengths, targets, labels, regime: Regime,
                   mode: str = "eval", seed: Optional[int] = None):
    """Component losses for one batch: (L_cls or None, L_next or None)."""
    out = model(ids, lengths, mode=mode, seed=seed)
    l_cls = l_next = None
    if regime is not Regime.PRETRAIN_NEXT_CHAR:
        l_cls = objectives.classification_loss_from_logits(out.cls_logit, labels)
    if regime in (Regime.PRETRAIN_NEXT_CHAR, Regime.MIXED_OBJECTIVE):
        l_next = objectives.next_char_loss(out.next_char_logits, targets, lengths)
    return l_cls, l_next


def run_regime(dataset: Sequence[LabeledRecord], config: RegimeConfig, model_config: ModelConfig,
               pretrain_corpus: Optional[Sequence[LabeledRecord]] = None,
               initial_model: Optional[ByteTransformer] = None,
               metrics_path=None, val_records: Optional[Sequence[LabeledRecord]] = None,
               log_every: int = 1) -> TrainResult:
    from .evaluation import roc_auc

    regime = config.regime
    if config.sequential:
        torch.use_deterministic_algorithms(True)
    torch.manual_seed(config.seed)

    if regime is Regime.FINE_TUNE:
        if initial_model is None:
            raise MissingPretrainedParams("FineTune needs a pretrained model")
        model = initial_model
        if config.freeze_layers >= model.config.n_layers:
            raise ValueError("freeze_layers must be smaller than n_layers")
        model.freeze_layers(config.freeze_layers)
    elif initial_model is not None:
        model = initial_model
    else:
        model = ByteTransformer(model_config)
    cfg = model.config
    if regime in (Regime.PRETRAIN_NEXT_CHAR, Regime.MIXED_OBJECTIVE) and cfg.head != "url":
        raise ValueError(f"{regime.value} needs the next-character head")

    if regime is Regime.PRETRAIN_NEXT_CHAR:
        train_records = list(pretrain_corpus if pretrain_corpus is not None else dataset)
        val_set: List[LabeledRecord] = list(val_records or [])
    else:
        _labels(dataset)
        if val_records is not None:
            train_records, val_set = list(dataset), list(val_records)
        else:
            tr, va = split_validation(len(dataset), config.val_fraction, config.seed)
            train_records = [dataset[i] for i in tr]
            val_set = [dataset[i] for i in va]

    ids, lengths, targets = encode_records(train_records, cfg.context_n)
    labels = torch.tensor([0 if r.label is None else r.label for r in train_records],
                          dtype=torch.get_default_dtype())
    trainable = {n: p for n, p in model.named_parameters() if p.requires_grad}
    state: dict = {}
    metrics: List[dict] = []
    log_fh = open(metrics_path, "w") if metrics_path else None

    def log(entry):
        metrics.append(entry)
        if log_fh:
            log_fh.write(json.dumps(entry) + "\n")

    it = 0
    best_auc, best_epoch, best_state = -1.0, None, None
    try:
        for epoch in range(config.epochs):
            if config.balanced_batches and regime is not Regime.PRETRAIN_NEXT_CHAR:
                batches = list(balanced_batches(labels.long().tolist(), config.batch_size,
                                                seed=config.seed * 7919 + epoch))
            else:
                batches = shuffled_batches(len(train_records), config.batch_size,
                                           seed=config.seed * 7919 + epoch)
            model.train()
            for idx in batches:
                idx_t = torch.tensor(idx, dtype=torch.long)
                width = int(lengths[idx_t].max()) + 1
                l_cls, l_next = compute_losses(model, ids[idx_t, :width], lengths[idx_t],
                                               targets[idx_t, :width],
                                               labels[idx_t], regime, mode="train",
                                               seed=config.seed * 1_000_003 + it)
                entry = {"iter": it, "epoch": epoch}
                if regime is Regime.MIXED_OBJECTIVE:
                    total, res = objectives.mixed_loss([l_cls, l_next], config.balance_spec, it)
                    entry.update(loss_cls=res.component_losses[0], loss_next=res.component_losses[1],
                                 alpha=res.multipliers[0], beta=res.multipliers[1])
                elif regime is Regime.PRETRAIN_NEXT_CHAR:
                    total = l_next
                    entry.update(loss_cls=None, loss_next=l_next.item(), alpha=0.0, beta=1.0)
                else:
                    total = l_cls
                    entry.update(loss_cls=l_cls.item(), loss_next=None, alpha=1.0, beta=0.0)
                if cfg.span is not None and cfg.span.span_penalty_lambda > 0:
                    total = total + span_penalty(model)
                entry["total"] = total.item()
                names = list(trainable)
                grads = torch.autograd.grad(total, [trainable[n] for n in names], allow_unused=True)
                grads = {n: (torch.zeros_like(trainable[n]) if g is None else g)
                         for n, g in zip(names, grads)}
                for n, g in grads.items():
                    if not bool(torch.isfinite(g).all()):
                        from .errors import NonFiniteGradient
                        raise NonFiniteGradient(f"non-finite gradient in {n}")
                optimizer_step(trainable, grads, config.optimizer, state)
                if it % log_every == 0:
                    log(entry)
                it += 1
            model.eval()
            epoch_entry = {"epoch": epoch, "val_auc": None}
            val_labels = [r.label for r in val_set]
            if val_set and 0 in val_labels and 1 in val_labels:
                scores = predict_scores(model, val_set)
                epoch_entry["val_auc"] = roc_auc(scores, val_labels).auc
                if config.keep_best_val and epoch_entry["val_auc"] > best_auc:
                    best_auc, best_epoch = epoch_entry["val_auc"], epoch
                    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            log(epoch_entry)
    finally:
        if log_fh:
            log_fh.close()
    if best_state is not None:
        model.load_state_dict(best_state)
    return TrainResult(model=model, optimizer_state=state, metrics=metrics, best_epoch=best_epoch)


@torch.no_grad()
def predict_scores(model: ByteTransformer, records: Sequence[LabeledRecord],
                   batch_size: int = 256) -> List[float]:
    model.eval()
    ids, lengths, _ = encode_records(records, model.config.context_n)
    scores: List[float] = []
    for start in range(0, len(records), batch_size):
        sl = slice(start, start + batch_size)
        width = int(lengths[sl].max()) + 1
        out = model(ids[sl, :width], lengths[sl], mode="eval")
        scores.extend(out.cls_score.tolist())
    return scores


def regime_config_dict(config: RegimeConfig) -> dict:
    d = asdict(config)
    d["regime"] = config.regime.value
    return d
