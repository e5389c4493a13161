from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmore.bm25 import tokenize
from cmore.chunker import (
    DEFAULT_CONFIGS,
    ChunkConfig,
    TextBlock,
    chunk,
    chunk_document,
    chunk_multi,
    parse_configs,
    select_context,
    split_100w,
)
from oracles import brute_force_bm25, chunk_starts


def words(n: int) -> list[str]:
    return [f"t{i}" for i in range(n)]


def test_config_validation():
    for n, m in ((0, 0), (10, 0), (10, 11), (-1, -1)):
        with pytest.raises(ValueError):
            ChunkConfig(n, m)
    assert parse_configs("128:64, 256:128") == [ChunkConfig(128, 64), ChunkConfig(256, 128)]
    assert DEFAULT_CONFIGS == (ChunkConfig(128, 64), ChunkConfig(256, 128), ChunkConfig(512, 256))


def test_short_document_single_block():
    blocks = chunk(words(50), ChunkConfig(128, 64))
    assert len(blocks) == 1 and len(blocks[0].words) == 50


def test_worked_example_l300():
    blocks = chunk(words(300), ChunkConfig(128, 64))
    assert [b.start for b in blocks] == [0, 64, 128, 192]
    assert len(blocks[-1].words) == 108


def test_exact_fit_single_block():
    assert len(chunk(words(128), ChunkConfig(128, 64))) == 1


def test_empty_document():
    assert chunk([], ChunkConfig(128, 64)) == []


def test_chunk_multi_examples():
    short = words(10)
    two = chunk_multi(short, [ChunkConfig(128, 64), ChunkConfig(256, 128)])
    assert len(two) == 2 and two[0].words == two[1].words and two[0].config != two[1].config
    assert len(chunk_multi(words(300))) == 4 + 2 + 1
    cfg = ChunkConfig(7, 3)
    assert chunk_multi(words(40), [cfg]) == chunk(words(40), cfg)
    with pytest.raises(ValueError):
        chunk_multi(words(5), [])


@settings(max_examples=200, deadline=None)
@given(length=st.integers(0, 3000), cfg=st.sampled_from(DEFAULT_CONFIGS + (ChunkConfig(5, 5), ChunkConfig(9, 2))))
def test_chunk_invariants(length, cfg):
    blocks = chunk(words(length), cfg)
    assert [b.start for b in blocks] == chunk_starts(length, cfg.n, cfg.m)
    covered = set()
    for b in blocks:
        assert len(b.words) <= cfg.n
        assert b.start % cfg.m == 0
        covered.update(range(b.start, b.end))
    assert covered == set(range(length))


def test_document_blocks_keep_source_text():
    text = "Alpha, beta; gamma.\nDelta   epsilon zeta eta!"
    blocks = chunk_document(text, [ChunkConfig(3, 2)], doc_id="d")
    assert blocks[0].text == "Alpha, beta; gamma"
    assert blocks[1].text == "gamma.\nDelta   epsilon"
    assert blocks[1].block_id == "d#3-2-2"
    for b in blocks:
        assert tokenize(b.text) == b.words


def test_select_context_single_block():
    b = chunk(words(10), ChunkConfig(128, 64))
    assert select_context("t3", b).block is b[0]


def test_select_context_rare_term_wins_against_oracle():
    blocks = [
        TextBlock("the river flows past the old mill".split(), 0, ChunkConfig(8, 4)),
        TextBlock("the river hosts a rare otter colony".split(), 4, ChunkConfig(8, 4)),
    ]
    sel = select_context("where does the otter live by the river", blocks)
    assert sel.block is blocks[1]
    oracle = brute_force_bm25([(str(i), b.words) for i, b in enumerate(blocks)],
                              tokenize("where does the otter live by the river"), 2)
    assert oracle[0][0] == "1"
    assert sel.score == pytest.approx(oracle[0][1], rel=1e-12)


def test_select_context_ties_prefer_smaller_n_then_start():
    text = " ".join(words(20))
    blocks = chunk_multi(tokenize(text), [ChunkConfig(256, 128), ChunkConfig(128, 64)])
    sel = select_context("t4", blocks)
    assert sel.block.config == ChunkConfig(128, 64)
    same = [TextBlock(["x", "y"], 8, ChunkConfig(4, 4)), TextBlock(["x", "y"], 4, ChunkConfig(4, 4))]
    assert select_context("x", same).block.start == 4


def test_select_context_weak_when_nothing_matches():
    blocks = chunk(words(30), ChunkConfig(8, 4))
    sel = select_context("unrelated question", blocks)
    assert sel.weak and sel.block is blocks[0]
    with pytest.raises(ValueError):
        select_context("q", [])


@settings(max_examples=60, deadline=None)
@given(
    doc=st.lists(st.sampled_from("abcdefghijk"), min_size=1, max_size=80),
    query=st.lists(st.sampled_from("abcdefghijklm"), min_size=1, max_size=5),
)
def test_select_context_score_is_max(doc, query):
    blocks = chunk_multi(doc, [ChunkConfig(8, 4), ChunkConfig(16, 8)])
    sel = select_context(" ".join(query), blocks)
    ranked = brute_force_bm25([(str(i), b.words) for i, b in enumerate(blocks)], query, len(blocks))
    best = ranked[0][1] if ranked else 0.0
    assert sel.score == pytest.approx(best, rel=1e-9, abs=1e-12)


def test_split_100w_examples():
    body = " ".join(f"w{i}" for i in range(250))
    parts = split_100w("T", body, id_prefix="7_")
    assert [len(tokenize(p.text)) for p in parts] == [100, 100, 50]
    assert [p.id for p in parts] == ["7_0", "7_1", "7_2"]
    assert all(p.title == "T" for p in parts)
    assert len(split_100w("T", " ".join(f"w{i}" for i in range(100)))) == 1
    assert split_100w("T", "") == []


@settings(max_examples=50, deadline=None)
@given(st.text(alphabet=st.sampled_from("ab c,.\n-é1"), max_size=600))
def test_split_100w_concatenates_back(body):
    parts = split_100w("T", body, words=7)
    assert [t for p in parts for t in tokenize(p.text)] == tokenize(body)
    assert all(0 < len(tokenize(p.text)) <= 7 for p in parts)


def test_random_documents_against_enumeration():
    rng = random.Random(4)
    for _ in range(100):
        length = rng.randint(1, 5000)
        for cfg in DEFAULT_CONFIGS:
            starts = [b.start for b in chunk(words(length), cfg)]
            assert starts == chunk_starts(length, cfg.n, cfg.m)
