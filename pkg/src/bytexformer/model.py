"""Decoder-only transformer over byte tokens.

Post-norm blocks (attention -> add&norm -> feed-forward -> add&norm) over
embeddings plus a fixed sinusoidal position signal, which is added to the
input embeddings only.  Two head layouts:

* ``url``: a classification FFNN on the CLS hidden state and a next-character
  FFNN on every position.
* ``byte``: a logistic regressor on the CLS hidden state, usually combined with
  adaptive-span attention.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DegenerateRow, NonFiniteActivation, NonFiniteGradient, ShapeMismatch
from .tokenizer import N_INPUT_IDS, N_OUTPUT_IDS, TokenSequence

MASK_VALUE = -1e9
HEAD_HIDDEN = 32


@dataclass
class AdaptiveSpanConfig:
    max_span_r: int = 32
    span_limit: int = 2048
    span_penalty_lambda: float = 0.0
    init_span: float = 0.0
    embed_dropout_p: float = 0.05

    def __post_init__(self):
        if not 0 < self.max_span_r <= self.span_limit:
            raise ValueError("need 0 < max_span_r <= span_limit")
        if self.span_penalty_lambda < 0:
            raise ValueError("span_penalty_lambda must be nonnegative")


@dataclass
class ModelConfig:
    n_layers: int = 20
    context_n: int = 256
    d_model: int = 64
    d_ff: int = 128
    n_heads: int = 4
    dropout_p: float = 0.1
    vocab_in: int = N_INPUT_IDS
    vocab_out: int = N_OUTPUT_IDS
    head: str = "url"
    span: Optional[AdaptiveSpanConfig] = None
    norm_placement: str = "post"

    def __post_init__(self):
        if isinstance(self.span, dict):
            self.span = AdaptiveSpanConfig(**self.span)
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.context_n < 2:
            raise ValueError("context_n must be >= 2")
        if self.head not in ("url", "byte"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.norm_placement != "post":
            raise ValueError("only post-norm blocks are implemented")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def url_default(cls, **kw) -> "ModelConfig":
        return cls(**kw)

    @classmethod
    def byte_default(cls, **kw) -> "ModelConfig":
        base = dict(n_layers=10, context_n=256, d_model=32, d_ff=128, n_heads=2,
                    dropout_p=0.05, head="byte", span=AdaptiveSpanConfig())
        base.update(kw)
        return cls(**base)


@dataclass
class ForwardOutput:
    cls_score: torch.Tensor
    next_char_logits: Optional[torch.Tensor]
    hidden_final: torch.Tensor
    cls_logit: torch.Tensor = field(repr=False, default=None)


def positional_encoding(position: int, d_model: int) -> torch.Tensor:
    return positional_table(position + 1, d_model)[position]


def positional_table(n_positions: int, d_model: int, dtype=torch.float64) -> torch.Tensor:
    """Rows are positions; even columns sin(pos / 10000^(2i/d)), odd columns cos."""
    pos = torch.arange(n_positions, dtype=torch.float64).unsqueeze(1)
    pair = torch.arange(0, d_model, 2, dtype=torch.float64)
    freq = torch.pow(10000.0, -pair / d_model)
    table = torch.zeros(n_positions, d_model, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq)[:, : d_model // 2]
    return table.to(dtype)


def attention_mask(length_m, context_n: int) -> torch.Tensor:
    """Boolean (…, N, N) mask, True where query i may attend key j.

    Allowed iff j <= i and j <= M, so pad keys are hidden from every query.
    ``length_m`` may be an int or a 1-D tensor of per-sample lengths.
    """
    idx = torch.arange(context_n)
    causal = idx.unsqueeze(1) >= idx.unsqueeze(0)
    lengths = torch.as_tensor(length_m)
    keys_ok = idx.view(*([1] * lengths.dim()), 1, context_n) <= lengths.view(*lengths.shape, 1, 1)
    return causal & keys_ok


def span_ramp(distance: torch.Tensor, z: torch.Tensor, max_span_r: int) -> torch.Tensor:
    """Soft span mask clamp((R + z - x) / R, 0, 1)."""
    return torch.clamp((max_span_r + z - distance) / max_span_r, 0.0, 1.0)


def _dropout(x: torch.Tensor, p: float, gen: Optional[torch.Generator]) -> torch.Tensor:
    if gen is None or p == 0.0:
        return x
    keep = torch.rand(x.shape, generator=gen, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


class MultiHeadAttention(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.d_model
        self.n_heads = config.n_heads
        self.d_head = d // config.n_heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d, bias=False)  # a key bias cannot change any softmax row
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)
        self.span = config.span
        if self.span is not None:
            self.span_z = nn.Parameter(torch.full((config.n_heads,), float(self.span.init_span)))
        self.last_weights: Optional[torch.Tensor] = None

    def clamped_span(self) -> torch.Tensor:
        return torch.clamp(self.span_z, 0.0, float(self.span.span_limit))

    def forward(self, hidden, mask, gen=None, dropout_p=0.0, use_span=True, keep_weights=False):
        b, n, d = hidden.shape
        h, dh = self.n_heads, self.d_head
        q = self.q(hidden).view(b, n, h, dh).transpose(1, 2)
        k = self.k(hidden).view(b, n, h, dh).transpose(1, 2)
        v = self.v(hidden).view(b, n, h, dh).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        scores = scores.masked_fill(~mask.unsqueeze(1), MASK_VALUE)
        weights = torch.softmax(scores, dim=-1)
        if self.span is not None and use_span:
            idx = torch.arange(n, dtype=hidden.dtype)
            distance = idx.view(n, 1) - idx.view(1, n)
            ramp = span_ramp(distance, self.clamped_span().to(hidden.dtype).view(h, 1, 1),
                             self.span.max_span_r)
            weights = weights * ramp.unsqueeze(0)
            weights = weights / weights.sum(dim=-1, keepdim=True)
        if keep_weights:
            self.last_weights = weights.detach()
        weights = _dropout(weights, dropout_p, gen)
        out = (weights @ v).transpose(1, 2).reshape(b, n, d)
        return self.o(out)


class Block(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.attn = MultiHeadAttention(config)
        self.norm1 = nn.LayerNorm(config.d_model)
        self.ff1 = nn.Linear(config.d_model, config.d_ff)
        self.ff2 = nn.Linear(config.d_ff, config.d_model)
        self.norm2 = nn.LayerNorm(config.d_model)
        self.dropout_p = config.dropout_p

    def forward(self, x, mask, gen=None, use_span=True, keep_weights=False):
        p = self.dropout_p if gen is not None else 0.0
        a = self.attn(x, mask, gen, p, use_span, keep_weights)
        x = self.norm1(x + _dropout(a, p, gen))
        f = self.ff2(F.gelu(self.ff1(x)))
        return self.norm2(x + _dropout(f, p, gen))


class HeadFFNN(nn.Module):
    """LayerNorm -> Linear(d, 32) -> ELU -> Linear(32, out)."""

    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.norm = nn.LayerNorm(d_in)
        self.hidden = nn.Linear(d_in, HEAD_HIDDEN)
        self.out = nn.Linear(HEAD_HIDDEN, d_out)

    def forward(self, x):
        return self.out(F.elu(self.hidden(self.norm(x))))


class ByteTransformer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.embed = nn.Embedding(config.vocab_in, config.d_model)
        self.register_buffer("pos", positional_table(config.context_n, config.d_model,
                                                     torch.get_default_dtype()),
                             persistent=False)
        self.layers = nn.ModuleList(Block(config) for _ in range(config.n_layers))
        if config.head == "url":
            self.cls_head = HeadFFNN(config.d_model, 1)
            self.next_head = HeadFFNN(config.d_model, config.vocab_out)
        else:
            self.cls_head = nn.Linear(config.d_model, 1)
            self.next_head = None
        self.reset_parameters()

    def reset_parameters(self):
        for name, p in self.named_parameters():
            if name.endswith("span_z"):
                nn.init.constant_(p, float(self.config.span.init_span))
            elif p.dim() >= 2:
                nn.init.xavier_uniform_(p)
            elif "norm" in name and name.endswith("weight"):
                nn.init.ones_(p)
            else:
                nn.init.zeros_(p)

    def _apply(self, fn, *args, **kwargs):
        # keep the position table in step with dtype changes (e.g. .double())
        out = super()._apply(fn, *args, **kwargs)
        self.pos = positional_table(self.config.context_n, self.config.d_model,
                                    self.embed.weight.dtype)
        return out

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor, mode: str = "eval",
                seed: Optional[int] = None, use_span: bool = True,
                keep_weights: bool = False) -> ForwardOutput:
        cfg = self.config
        # a width below context_n is a batch cut after its longest CLS; the
        # masks make every position <= M independent of the dropped pads
        if ids.dim() != 2 or not 2 <= ids.shape[1] <= cfg.context_n:
            raise ShapeMismatch(f"expected (batch, <= {cfg.context_n}) ids, got {tuple(ids.shape)}")
        if lengths.shape != ids.shape[:1]:
            raise ShapeMismatch("one length per sample required")
        width = ids.shape[1]
        if bool((lengths < 1).any()) or bool((lengths >= width).any()):
            raise ShapeMismatch("every length must satisfy 1 <= M < width")
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be train or eval, not {mode!r}")
        gen = None
        if mode == "train":
            gen = torch.Generator().manual_seed(0 if seed is None else int(seed))
        mask = attention_mask(lengths, width)
        if not bool(mask.any(dim=-1).all()):
            raise DegenerateRow("a query has no admissible keys")
        x = self.embed(ids) + self.pos[:width]
        if cfg.span is not None:
            x = _dropout(x, cfg.span.embed_dropout_p, gen)
        for layer in self.layers:
            x = layer(x, mask, gen, use_span, keep_weights)
        if not bool(torch.isfinite(x).all()):
            raise NonFiniteActivation("non-finite hidden state")
        cls_hidden = x[torch.arange(x.shape[0]), lengths]
        cls_logit = self.cls_head(cls_hidden).squeeze(-1)
        logits = self.next_head(x) if self.next_head is not None else None
        return ForwardOutput(cls_score=torch.sigmoid(cls_logit), next_char_logits=logits,
                             hidden_final=x, cls_logit=cls_logit)

    def span_parameters(self) -> List[torch.Tensor]:
        return [layer.attn.span_z for layer in self.layers if layer.attn.span is not None]

    def freeze_layers(self, count: int):
        """Stop gradients into the first ``count`` attention blocks."""
        for layer in self.layers[:count]:
            for p in layer.parameters():
                p.requires_grad_(False)

    def frozen_names(self) -> List[str]:
        return [n for n, p in self.named_parameters() if not p.requires_grad]


def batch_tensors(batch: Sequence[TokenSequence]):
    """Stack token sequences into (ids, lengths) long tensors."""
    n = {s.context_n for s in batch}
    if len(n) != 1:
        raise ShapeMismatch("all sequences in a batch must share context_n")
    ids = torch.tensor([list(s.ids) for s in batch], dtype=torch.long)
    lengths = torch.tensor([s.length_m for s in batch], dtype=torch.long)
    return ids, lengths


def forward(batch: Sequence[TokenSequence], model: ByteTransformer, mode: str = "eval",
            seed: Optional[int] = None) -> ForwardOutput:
    ids, lengths = batch_tensors(batch)
    if ids.shape[1] != model.config.context_n:
        raise ShapeMismatch("sequence context_n differs from the model's")
    return model(ids, lengths, mode=mode, seed=seed)


def span_penalty(model: ByteTransformer) -> torch.Tensor:
    span = model.config.span
    if span is None:
        raise ValueError("span penalty needs the adaptive-span variant")
    zs = model.span_parameters()
    total = sum((z.sum() for z in zs), torch.zeros(()))
    return span.span_penalty_lambda * total


def backward(loss: torch.Tensor, model: ByteTransformer) -> Dict[str, torch.Tensor]:
    """Gradients of ``loss`` for every named parameter (zeros where frozen)."""
    params = [(n, p) for n, p in model.named_parameters()]
    trainable = [p for _, p in params if p.requires_grad]
    grads = torch.autograd.grad(loss, trainable, allow_unused=True) if trainable else ()
    it = iter(grads)
    out: Dict[str, torch.Tensor] = {}
    for name, p in params:
        g = next(it) if p.requires_grad else None
        out[name] = torch.zeros_like(p) if g is None else g
        if not bool(torch.isfinite(out[name]).all()):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    return out
