import random

import pytest
from hypothesis import given, settings, strategies as st

from bytexformer import byte_codecs as bc
from bytexformer.errors import CodebookFormatError, MissingCodebook, UnknownToken

from codec_oracles import oracle_bpe_learn, oracle_pad_runs


def test_bpe_learn_aaab():
    table = bc.bpe_learn([b"aaab"], 1, 1)
    assert table.merges == [(97, 97)]
    assert bc.bpe_encode(b"aaab", table) == [256, 97, 98]
    assert table.final_vocab_size == 257


def test_bpe_learn_single_byte_is_exhausted():
    table = bc.bpe_learn([b"z"], 3, 2)
    assert table.merges == [] and table.exhausted


def test_bpe_vocab_size_ten_by_ten():
    rng = random.Random(0)
    corpus = [bytes(rng.choice(b"abcdefgh") for _ in range(400)) for _ in range(20)]
    table = bc.bpe_learn(corpus, 10, 10)
    assert not table.exhausted
    assert table.final_vocab_size == 356


def test_bpe_encode_examples():
    table = bc.MergeTable(merges=[(97, 97)])
    assert bc.bpe_encode(b"aaaa", table) == [256, 256]
    assert bc.bpe_encode(b"xyz", bc.MergeTable()) == list(b"xyz")
    assert bc.bpe_decode([256, 97, 98], table) == b"aaab"
    with pytest.raises(UnknownToken):
        bc.bpe_decode([257], table)


def test_merge_ids_are_consecutive_and_causal():
    table = bc.bpe_learn([b"abababcdcdcdabcd" * 4], 3, 2)
    table.validate()
    assert table.final_vocab_size == 256 + len(table.merges)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.binary(min_size=0, max_size=16), min_size=1, max_size=4),
       st.integers(1, 3), st.integers(1, 3))
def test_bpe_learn_matches_oracle(corpus, iterations, per_iter):
    # alphabet of 3 symbols so pairs repeat
    corpus = [bytes(b % 3 for b in s) for s in corpus]
    table = bc.bpe_learn(corpus, iterations, per_iter)
    merges, seqs = oracle_bpe_learn(corpus, iterations, per_iter)
    assert table.merges == merges
    assert [bc.bpe_encode(s, table) for s in corpus] == seqs


@given(st.binary(max_size=200))
def test_bpe_roundtrip(data):
    table = bc.bpe_learn([b"the cat sat on the mat with the hat" * 3, b"\x00\x00\x00\xff\xff"], 3, 4)
    tokens = bc.bpe_encode(data, table)
    assert len(tokens) <= len(data)
    assert bc.bpe_decode(tokens, table) == data


def test_pad_runs_examples():
    assert bc.compress_pad_runs(bytes([0, 0, 0, 0, 0, 7, 255, 255, 255, 255])) == bytes([0, 0, 0, 7, 255, 255, 255])
    assert bc.compress_pad_runs(b"\x00\x00\x00") == b"\x00\x00\x00"
    assert bc.compress_pad_runs(b"") == b""


@given(st.lists(st.sampled_from([0, 255, 1, 7]), max_size=80).map(bytes))
def test_pad_runs_properties(data):
    once = bc.compress_pad_runs(data)
    assert once == oracle_pad_runs(data)
    assert bc.compress_pad_runs(once) == once
    assert len(once) <= len(data)
    assert [b for b in once if b not in (0, 255)] == [b for b in data if b not in (0, 255)]


def test_kilogram_learn():
    kset = bc.kilogram_learn([b"ABABAB"], n=2, top_k=1, flag_limit=100)
    assert kset.grams == {b"AB"}
    assert bc.kilogram_learn([b"abc"], n=1, top_k=10).grams == {b"a", b"b", b"c"}
    assert bc.kilogram_learn([b"ab", b"c"], n=5, top_k=3).grams == frozenset()


def test_kilogram_flag_limit():
    kset = bc.kilogram_learn([b"xxxx" + b"AB" * 10], n=2, top_k=1, flag_limit=5)
    assert kset.grams == {b"xx"}


def test_kilogram_filter():
    kset = bc.KilogramSet(grams={b"AB"}, n=2)
    assert bc.kilogram_filter(b"XXABYY", kset, "whitelist") == b"AB"
    assert bc.kilogram_filter(b"XXABYY", kset, "blacklist") == b"XXYY"
    empty = bc.KilogramSet(grams=set(), n=2)
    assert bc.kilogram_filter(b"XXABYY", empty, "whitelist") == b""
    assert bc.kilogram_filter(b"XXABYY", empty, "blacklist", truncate_limit=4) == b"XXAB"


@given(st.binary(max_size=120), st.sets(st.binary(min_size=2, max_size=2), max_size=6))
def test_kilogram_partition(data, grams):
    data = bytes(b % 4 for b in data)
    grams = {bytes(b % 4 for b in g) for g in grams}
    kset = bc.KilogramSet(grams=grams, n=2)
    white = bc.kilogram_filter(data, kset, "whitelist", None)
    black = bc.kilogram_filter(data, kset, "blacklist", None)
    assert len(white) + len(black) == len(data)
    flags = bc.kilogram_flags(data, kset)
    wi, bi = iter(white), iter(black)
    assert bytes(next(wi) if f else next(bi) for f in flags) == data


def test_pipeline_baseline_and_missing_codebook():
    data = bytes(range(12))
    assert bc.apply_pipeline(data, bc.EncodingPipeline("Baseline", 8)) == list(range(8))
    with pytest.raises(MissingCodebook):
        bc.apply_pipeline(data, bc.EncodingPipeline("BytePair", 8))
    with pytest.raises(MissingCodebook):
        bc.apply_pipeline(data, bc.EncodingPipeline("KilogramWhitelist", 8))


def test_pipeline_bytepair_extra_covers_more():
    table = bc.MergeTable(merges=[(97, 97)])
    data = b"xyzw" + b"a" * 12
    short = bc.apply_pipeline(data, bc.EncodingPipeline("BytePair", 8, merge_table=table))
    extra = bc.apply_pipeline(data, bc.EncodingPipeline("BytePairExtra", 8, merge_table=table))
    assert len(short) <= 8 and len(extra) <= 8
    assert len(bc.bpe_decode(extra, table)) > len(bc.bpe_decode(short, table))


def test_pipeline_nopad_extra_covers_more():
    data = b"ab" + b"\x00" * 20 + b"cdefgh"
    short = bc.apply_pipeline(data, bc.EncodingPipeline("NoPad", 10))
    extra = bc.apply_pipeline(data, bc.EncodingPipeline("NoPadExtra", 10))
    assert bytes(short) == b"ab\x00\x00\x00"
    assert bytes(extra) == b"ab\x00\x00\x00cdefg"


def test_pipeline_kilograms():
    kset = bc.KilogramSet(grams={b"AB"}, n=2, flag_limit=6)
    data = b"XXABYYAB"
    assert bytes(bc.apply_pipeline(data, bc.EncodingPipeline("KilogramWhitelist", 10, kilograms=kset))) == b"AB"
    assert bytes(bc.apply_pipeline(data, bc.EncodingPipeline("KilogramBlacklist", 3, kilograms=kset))) == b"XXY"


def test_codebook_roundtrip():
    table = bc.bpe_learn([b"abracadabra" * 5], 2, 3)
    text = bc.dump_codebook(table)
    assert text.startswith("BXCODEBOOK 1 merges")
    again = bc.load_codebook(text)
    assert again == table and bc.dump_codebook(again) == text
    kset = bc.kilogram_learn([b"abracadabra" * 5], n=3, top_k=4, flag_limit=50)
    text = bc.dump_codebook(kset)
    assert bc.load_codebook(text) == kset and bc.dump_codebook(bc.load_codebook(text)) == text


@pytest.mark.parametrize("bad", ["", "NOPE 1 merges count=0", "BXCODEBOOK 9 merges count=0",
                                 "BXCODEBOOK 1 merges base_vocab=256 count=2 exhausted=0\n61 61",
                                 "BXCODEBOOK 1 merges base_vocab=256 count=1 exhausted=0\n100 61"])
def test_codebook_rejects_bad_input(bad):
    with pytest.raises(CodebookFormatError):
        bc.load_codebook(bad)
