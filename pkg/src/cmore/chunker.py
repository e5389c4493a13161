"""Sliding-window blocks over long documents, BM25 context selection, 100-word passages."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bm25 import DEFAULT_TOKENIZER, BM25Params, Tokenizer, accumulate, build_index


@dataclass(frozen=True, order=True)
class ChunkConfig:
    n: int  # block length in words
    m: int  # stride in words

    def __post_init__(self) -> None:
        if not 0 < self.m <= self.n:
            raise ValueError(f"invalid chunk config n={self.n} m={self.m}: need 0 < m <= n")

    def __str__(self) -> str:
        return f"{self.n}:{self.m}"

    @classmethod
    def parse(cls, text: str) -> "ChunkConfig":
        n, _, m = text.partition(":")
        return cls(int(n), int(m))


DEFAULT_CONFIGS = (ChunkConfig(128, 64), ChunkConfig(256, 128), ChunkConfig(512, 256))


def parse_configs(text: str) -> list[ChunkConfig]:
    """``"128:64,256:128"`` -> configs."""
    return [ChunkConfig.parse(part.strip()) for part in text.split(",") if part.strip()]


@dataclass
class TextBlock:
    words: list[str]
    start: int
    config: ChunkConfig
    doc_id: str = ""
    # Source text covered by the block, from its first word to its last.
    text: str = ""

    @property
    def end(self) -> int:
        return self.start + len(self.words)

    @property
    def block_id(self) -> str:
        return f"{self.doc_id}#{self.config.n}-{self.config.m}-{self.start}"


def block_starts(length: int, config: ChunkConfig) -> list[int]:
    if length <= 0:
        return []
    starts = []
    start = 0
    while True:
        starts.append(start)
        if start + config.n >= length:
            return starts
        start += config.m


def chunk(
    words: Sequence[str], config: ChunkConfig, doc_id: str = "", text: str | None = None,
    offsets: Sequence[tuple[int, int]] | None = None,
) -> list[TextBlock]:
    """Blocks of ``config.n`` words starting every ``config.m`` words.

    The last block is the first one that reaches the end of the document, so
    every word is covered and no block is a strict suffix of its predecessor.
    When ``text`` and per-word character ``offsets`` are given, each block also
    carries the source text it covers.
    """
    blocks = []
    for start in block_starts(len(words), config):
        end = min(start + config.n, len(words))
        if text is not None and offsets is not None:
            block_text = text[offsets[start][0] : offsets[end - 1][1]]
        else:
            block_text = " ".join(words[start:end])
        blocks.append(TextBlock(list(words[start:end]), start, config, doc_id, block_text))
    return blocks


def chunk_multi(
    words: Sequence[str], configs: Sequence[ChunkConfig] = DEFAULT_CONFIGS, doc_id: str = "",
    text: str | None = None, offsets: Sequence[tuple[int, int]] | None = None,
) -> list[TextBlock]:
    if not configs:
        raise ValueError("at least one chunk config is required")
    blocks = []
    for config in configs:
        blocks.extend(chunk(words, config, doc_id, text, offsets))
    return blocks


def chunk_document(
    text: str, configs: Sequence[ChunkConfig] = DEFAULT_CONFIGS, doc_id: str = "",
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
) -> list[TextBlock]:
    """Tokenize ``text`` and chunk it under every config."""
    spans = tokenizer.spans(text)
    words = [s[0] for s in spans]
    offsets = [(s[1], s[2]) for s in spans]
    return chunk_multi(words, configs, doc_id, text, offsets)


@dataclass
class Selection:
    block: TextBlock
    score: float
    scores: list[float] = field(default_factory=list, repr=False)

    @property
    def weak(self) -> bool:
        """No query term overlaps any block."""
        return self.score <= 0.0


def select_context(
    question: str, blocks: Sequence[TextBlock], params: BM25Params = BM25Params(),
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
) -> Selection:
    """Pick the BM25-best block for ``question`` among one document's blocks.

    The index is built over ``blocks`` alone. Ties go to the smaller block
    length, then the earlier start. If nothing matches, the first block comes
    back with ``weak`` set.
    """
    if not blocks:
        raise ValueError("select_context needs at least one block")
    index = build_index(
        ((str(i), b.words) for i, b in enumerate(blocks)),
        params=params, tokenizer=tokenizer, pretokenized=True,
    )
    cand, cand_scores = accumulate(index, tokenizer(question))
    scores = np.zeros(len(blocks))
    scores[cand] = cand_scores
    best = min(
        range(len(blocks)),
        key=lambda i: (-scores[i], blocks[i].config.n, blocks[i].start, i),
    )
    return Selection(blocks[best], float(scores[best]), scores.tolist())


@dataclass(frozen=True)
class Passage:
    id: str
    title: str
    text: str


def split_100w(
    title: str, body: str, id_prefix: str = "", words: int = 100,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
) -> list[Passage]:
    """Split an article into consecutive, non-overlapping ``words``-word passages.

    Passage boundaries fall on word starts, so the passages' tokens concatenate
    back to the article's tokens and their texts (before stripping) concatenate
    back to ``body``.
    """
    spans = tokenizer.spans(body)
    if not spans:
        return []
    cuts = [0] + [spans[i][1] for i in range(words, len(spans), words)] + [len(body)]
    return [
        Passage(f"{id_prefix}{i}", title, body[cuts[i] : cuts[i + 1]].strip())
        for i in range(len(cuts) - 1)
    ]
