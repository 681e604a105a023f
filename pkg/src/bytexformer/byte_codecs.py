"""Byte-stream transforms applied before truncation: byte-pair encoding,
pad-run compression, and kilogram whitelisting/blacklisting.

Codebooks (``MergeTable``, ``KilogramSet``) round-trip through a small
line-oriented text format, see :func:`dump_codebook` / :func:`load_codebook`.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import CodebookFormatError, MissingCodebook, UnknownToken

BASE_VOCAB = 256
CODEBOOK_MAGIC = "BXCODEBOOK"
CODEBOOK_VERSION = 1

Pair = Tuple[int, int]


@dataclass
class MergeTable:
    merges: List[Pair] = field(default_factory=list)
    base_vocab: int = BASE_VOCAB
    exhausted: bool = False

    @property
    def final_vocab_size(self) -> int:
        return self.base_vocab + len(self.merges)

    def new_id(self, index: int) -> int:
        return self.base_vocab + index

    def validate(self):
        for i, (a, b) in enumerate(self.merges):
            limit = self.base_vocab + i
            if not (0 <= a < limit and 0 <= b < limit):
                raise CodebookFormatError(f"merge {i} refers to an id not yet defined")


@dataclass
class KilogramSet:
    grams: frozenset
    n: int = 6
    top_k: int = 0
    flag_limit: int = 12288

    def __post_init__(self):
        self.grams = frozenset(bytes(g) for g in self.grams)
        if any(len(g) != self.n for g in self.grams):
            raise ValueError("every gram must have exactly n bytes")
        if self.top_k and len(self.grams) > self.top_k:
            raise ValueError("more grams than top_k")


# -- byte-pair encoding -------------------------------------------------------

def count_pairs(seq: Sequence[int]) -> Counter:
    """Non-overlapping, left-to-right adjacent pair counts.

    Only pairs of two equal symbols can overlap ("aaa" holds one "aa").
    """
    counts: Counter = Counter()
    last_start: Dict[Pair, int] = {}
    for i in range(len(seq) - 1):
        pair = (seq[i], seq[i + 1])
        if last_start.get(pair, -2) == i - 1:
            continue
        last_start[pair] = i
        counts[pair] += 1
    return counts


def merge_pair(seq: Sequence[int], pair: Pair, new_id: int) -> List[int]:
    out: List[int] = []
    i = 0
    n = len(seq)
    a, b = pair
    while i < n:
        if i + 1 < n and seq[i] == a and seq[i + 1] == b:
            out.append(new_id)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def bpe_learn(corpus: Sequence[bytes], iterations: int = 10,
              merges_per_iter: int = 10) -> MergeTable:
    """Greedy byte-pair learning.

    Each iteration counts pairs once over the current corpus, takes the
    ``merges_per_iter`` most frequent (ties to the smaller pair), applies them
    in that order and re-encodes before the next count.  If pairs run out the
    partial table is returned with ``exhausted`` set.
    """
    if not corpus:
        raise ValueError("corpus must be non-empty")
    if iterations < 1 or merges_per_iter < 1:
        raise ValueError("iterations and merges_per_iter must be >= 1")
    seqs = [list(bytes(x)) for x in corpus]
    table = MergeTable()
    for _ in range(iterations):
        counts: Counter = Counter()
        for s in seqs:
            counts.update(count_pairs(s))
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        chosen = [p for p, _ in ranked[:merges_per_iter]]
        for pair in chosen:
            new_id = table.new_id(len(table.merges))
            table.merges.append(pair)
            seqs = [merge_pair(s, pair, new_id) for s in seqs]
        if len(chosen) < merges_per_iter:
            table.exhausted = True
            break
    return table


def bpe_encode(data, table: MergeTable) -> List[int]:
    seq = list(bytes(data))
    for i, pair in enumerate(table.merges):
        if len(seq) < 2:
            break
        seq = merge_pair(seq, pair, table.new_id(i))
    return seq


def bpe_decode(tokens: Iterable[int], table: MergeTable) -> bytes:
    expansions: List[bytes] = [bytes([i]) for i in range(table.base_vocab)]
    for a, b in table.merges:
        expansions.append(expansions[a] + expansions[b])
    out = bytearray()
    for t in tokens:
        if not 0 <= t < len(expansions):
            raise UnknownToken(f"token {t} not in a vocabulary of {len(expansions)}")
        out += expansions[t]
    return bytes(out)


# -- pad runs ------------------------------------------------------------------

def compress_pad_runs(data, max_run: int = 3) -> bytes:
    """Collapse runs of 0x00 or 0xFF longer than ``max_run`` to ``max_run``."""
    out = bytearray()
    run_byte = None
    run_len = 0
    for b in bytes(data):
        if b == run_byte:
            run_len += 1
        else:
            run_byte, run_len = b, 1
        if b in (0x00, 0xFF) and run_len > max_run:
            continue
        out.append(b)
    return bytes(out)


# -- kilograms -----------------------------------------------------------------

def count_ngrams(data: bytes, n: int) -> Counter:
    return Counter(data[i:i + n] for i in range(len(data) - n + 1))


def kilogram_learn(corpus: Sequence[bytes], n: int = 6, top_k: int = 1024,
                   flag_limit: int = 12288) -> KilogramSet:
    if n < 1 or top_k < 1:
        raise ValueError("n and top_k must be >= 1")
    counts: Counter = Counter()
    for sample in corpus:
        counts.update(count_ngrams(bytes(sample)[:flag_limit], n))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return KilogramSet(grams=frozenset(g for g, _ in ranked[:top_k]), n=n,
                       top_k=top_k, flag_limit=flag_limit)


def kilogram_flags(data: bytes, kset: KilogramSet) -> List[bool]:
    n = kset.n
    flags = [False] * len(data)
    if not kset.grams:
        return flags
    for i in range(len(data) - n + 1):
        if data[i:i + n] in kset.grams:
            for j in range(i, i + n):
                flags[j] = True
    return flags


def kilogram_filter(data, kset: KilogramSet, mode: str = "whitelist",
                    truncate_limit: Optional[int] = 4096) -> bytes:
    if mode not in ("whitelist", "blacklist"):
        raise ValueError(f"unknown mode {mode!r}")
    data = bytes(data)
    keep = mode == "whitelist"
    flags = kilogram_flags(data, kset)
    out = bytes(b for b, f in zip(data, flags) if f == keep)
    return out if truncate_limit is None else out[:truncate_limit]


# -- pipelines -----------------------------------------------------------------

class Transform(str, enum.Enum):
    BASELINE = "Baseline"
    BYTE_PAIR = "BytePair"
    NO_PAD = "NoPad"
    BYTE_PAIR_EXTRA = "BytePairExtra"
    NO_PAD_EXTRA = "NoPadExtra"
    KILOGRAM_WHITELIST = "KilogramWhitelist"
    KILOGRAM_BLACKLIST = "KilogramBlacklist"


@dataclass
class EncodingPipeline:
    transform: Transform = Transform.BASELINE
    truncate_limit: int = 4096
    merge_table: Optional[MergeTable] = None
    kilograms: Optional[KilogramSet] = None

    def __post_init__(self):
        self.transform = Transform(self.transform)


def apply_pipeline(data, pipeline: EncodingPipeline) -> List[int]:
    data = bytes(data)
    t = pipeline.transform
    limit = pipeline.truncate_limit
    if t in (Transform.BYTE_PAIR, Transform.BYTE_PAIR_EXTRA) and pipeline.merge_table is None:
        raise MissingCodebook(f"{t.value} needs a merge table")
    if t in (Transform.KILOGRAM_WHITELIST, Transform.KILOGRAM_BLACKLIST) and pipeline.kilograms is None:
        raise MissingCodebook(f"{t.value} needs a kilogram set")

    if t is Transform.BASELINE:
        return list(data[:limit])
    if t is Transform.BYTE_PAIR:
        return bpe_encode(data[:limit], pipeline.merge_table)
    if t is Transform.BYTE_PAIR_EXTRA:
        return bpe_encode(data, pipeline.merge_table)[:limit]
    if t is Transform.NO_PAD:
        return list(compress_pad_runs(data[:limit]))
    if t is Transform.NO_PAD_EXTRA:
        return list(compress_pad_runs(data)[:limit])
    kset = pipeline.kilograms
    mode = "whitelist" if t is Transform.KILOGRAM_WHITELIST else "blacklist"
    return list(kilogram_filter(data[:kset.flag_limit], kset, mode, limit))


# -- codebook files ------------------------------------------------------------

def dump_codebook(book) -> str:
    if isinstance(book, MergeTable):
        header = (f"{CODEBOOK_MAGIC} {CODEBOOK_VERSION} merges "
                  f"base_vocab={book.base_vocab} count={len(book.merges)} "
                  f"exhausted={int(book.exhausted)}")
        lines = [f"{a:x} {b:x}" for a, b in book.merges]
    elif isinstance(book, KilogramSet):
        header = (f"{CODEBOOK_MAGIC} {CODEBOOK_VERSION} kilograms n={book.n} "
                  f"top_k={book.top_k} flag_limit={book.flag_limit} count={len(book.grams)}")
        lines = [g.hex() for g in sorted(book.grams)]
    else:
        raise TypeError(f"not a codebook: {type(book).__name__}")
    return "\n".join([header] + lines) + "\n"


def load_codebook(text: str):
    rows = text.splitlines()
    if not rows:
        raise CodebookFormatError("empty codebook")
    head = rows[0].split()
    if len(head) < 3 or head[0] != CODEBOOK_MAGIC:
        raise CodebookFormatError("bad magic")
    if int(head[1]) != CODEBOOK_VERSION:
        raise CodebookFormatError(f"unsupported version {head[1]}")
    kind = head[2]
    try:
        params = dict(kv.split("=", 1) for kv in head[3:])
        body = [r for r in rows[1:] if r.strip()]
        if int(params["count"]) != len(body):
            raise CodebookFormatError("entry count does not match header")
        if kind == "merges":
            merges = [tuple(int(x, 16) for x in r.split()) for r in body]
            table = MergeTable(merges=merges, base_vocab=int(params["base_vocab"]),
                               exhausted=bool(int(params["exhausted"])))
            table.validate()
            return table
        if kind == "kilograms":
            return KilogramSet(grams=frozenset(bytes.fromhex(r) for r in body),
                               n=int(params["n"]), top_k=int(params["top_k"]),
                               flag_limit=int(params["flag_limit"]))
    except (KeyError, ValueError) as exc:
        if isinstance(exc, CodebookFormatError):
            raise
        raise CodebookFormatError(str(exc)) from exc
    raise CodebookFormatError(f"unknown codebook kind {kind!r}")
