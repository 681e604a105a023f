"""Raw-byte tokenization with a trailing CLS token and right padding.

Ids 0..255 are byte values, 256 is CLS (also the end-of-sequence label for
next-character prediction), 257 is PAD.  Pad positions never influence model
outputs; that is enforced by the attention mask, not by the embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

from .errors import EmptyInput, NonByteToken, TooLong

CLS_ID = 256
PAD_ID = 257
IGNORE = -100  # out-of-band target marker, never a token id
N_INPUT_IDS = 258
N_OUTPUT_IDS = 257


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple
    length_m: int
    context_n: int

    @property
    def cls_index(self) -> int:
        return self.length_m

    def __post_init__(self):
        if not 1 <= self.length_m <= self.context_n - 1:
            raise ValueError(f"length_m={self.length_m} outside [1, {self.context_n - 1}]")
        if len(self.ids) != self.context_n:
            raise ValueError("ids must cover the full context")


@dataclass(frozen=True)
class TargetSequence:
    targets: tuple


def _as_bytes(text) -> bytes:
    if isinstance(text, str):
        # Strings are taken as already byte-escaped (one code point per byte).
        return text.encode("latin-1")
    return bytes(text)


def encode(text, context_n: int) -> TokenSequence:
    data = _as_bytes(text)
    if len(data) == 0:
        raise EmptyInput("cannot encode an empty byte string")
    if len(data) > context_n - 1:
        raise TooLong(f"{len(data)} bytes exceed context_n - 1 = {context_n - 1}")
    m = len(data)
    ids = tuple(data) + (CLS_ID,) + (PAD_ID,) * (context_n - m - 1)
    return TokenSequence(ids=ids, length_m=m, context_n=context_n)


def truncate(text, context_n: int) -> bytes:
    """Cut a byte string to the longest prefix that ``encode`` accepts."""
    return _as_bytes(text)[: context_n - 1]


def next_char_targets(seq: TokenSequence) -> TargetSequence:
    m = seq.length_m
    targets = list(seq.ids[1:m]) + [CLS_ID] + [IGNORE] * (seq.context_n - m)
    return TargetSequence(targets=tuple(targets))


def decode(ids: Sequence[int]) -> bytes:
    for t in ids:
        if not 0 <= t <= 255:
            raise NonByteToken(f"token id {t} is not a byte")
    return bytes(ids)


def encode_ids(tokens: Sequence[int], context_n: int, cls_id: int = CLS_ID,
               pad_id: int = PAD_ID) -> List[int]:
    """Lay out an arbitrary token list (e.g. byte-pair output) as content+CLS+pad."""
    if len(tokens) == 0:
        raise EmptyInput("cannot encode an empty token list")
    if len(tokens) > context_n - 1:
        raise TooLong(f"{len(tokens)} tokens exceed context_n - 1 = {context_n - 1}")
    return list(tokens) + [cls_id] + [pad_id] * (context_n - len(tokens) - 1)
