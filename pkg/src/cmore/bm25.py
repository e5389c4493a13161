"""Tokenization, inverted index construction, Okapi BM25 scoring and exact top-k.

The same tokenizer drives chunk boundaries, within-document context selection
and full-corpus retrieval, so a word offset always means the same thing.

Index file layout (all integers little-endian)::

    magic        8 bytes   b"CMBM25IX"
    version      u32
    flags        u32       bit 0 = stemming, bit 1 = stopword removal
    k1, b        f64, f64
    N, V, P      u64 x 3   documents, terms, postings
    doc ids      u32[N] byte lengths, then the UTF-8 blob
    doc lengths  u32[N]
    terms        u32[V] byte lengths, then the UTF-8 blob (terms sorted)
    df           u32[V]
    doc deltas   u32[P]    per term: first ordinal absolute, then gaps
    tf           u32[P]
    crc32        u32       over every preceding byte
"""

from __future__ import annotations

import csv
import heapq
import logging
import math
import re
import struct
import sys
import tempfile
import zlib
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"CMBM25IX"
FORMAT_VERSION = 1

_TOKEN_RE = re.compile(r"[^\W_]+")

RankedList = list[tuple[str, float]]


@lru_cache(maxsize=1)
def _stopwords() -> frozenset[str]:
    text = resources.files("cmore.data").joinpath("stopwords.txt").read_text("utf-8")
    return frozenset(
        line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")
    )


def _s_stem(word: str) -> str:
    # Harman's "S" stemmer: plural stripping only.
    if len(word) > 3 and word.endswith("ies") and not word.endswith(("eies", "aies")):
        return word[:-3] + "y"
    if len(word) > 3 and word.endswith("es") and not word.endswith(("aes", "ees", "oes")):
        return word[:-1]
    if len(word) > 2 and word.endswith("s") and not word.endswith(("us", "ss")):
        return word[:-1]
    return word


@dataclass(frozen=True)
class Tokenizer:
    """Lowercase word tokens split on runs of non-alphanumeric characters."""

    stem: bool = False
    stopwords: bool = False

    def __call__(self, text: str) -> list[str]:
        tokens = _TOKEN_RE.findall(text.lower())
        if self.stopwords:
            stop = _stopwords()
            tokens = [t for t in tokens if t not in stop]
        if self.stem:
            tokens = [_s_stem(t) for t in tokens]
        return tokens

    def spans(self, text: str) -> list[tuple[str, int, int]]:
        """Tokens with their character offsets in ``text``."""
        out = []
        stop = _stopwords() if self.stopwords else ()
        for m in _TOKEN_RE.finditer(text):
            tok = m.group().lower()
            if tok in stop:
                continue
            if self.stem:
                tok = _s_stem(tok)
            out.append((tok, m.start(), m.end()))
        return out

    @property
    def flags(self) -> int:
        return int(self.stem) | (int(self.stopwords) << 1)

    @classmethod
    def from_flags(cls, flags: int) -> "Tokenizer":
        return cls(stem=bool(flags & 1), stopwords=bool(flags & 2))


DEFAULT_TOKENIZER = Tokenizer()


def tokenize(text: str) -> list[str]:
    return DEFAULT_TOKENIZER(text)


@dataclass(frozen=True)
class BM25Params:
    k1: float = 1.2
    b: float = 0.75


def idf(n_docs: int, df: int) -> float:
    return math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))


def doc_norms(doc_lengths: np.ndarray, avg_len: float, params: BM25Params) -> np.ndarray:
    """Per-document ``k1 * (1 - b + b * len / avglen)``."""
    if avg_len == 0:
        return np.full(len(doc_lengths), params.k1 * (1.0 - params.b))
    dl = np.asarray(doc_lengths, dtype=np.float64)
    return params.k1 * ((1.0 - params.b) + (params.b * dl) / avg_len)


def term_weight(idf_value, tf, norm, k1: float):
    # Shared by the scalar scorer and the vectorized top-k so both round identically.
    return (idf_value * (tf * (k1 + 1.0))) / (tf + norm)


class DuplicatePassageError(ValueError):
    def __init__(self, passage_id: str):
        super().__init__(f"duplicate passage id: {passage_id!r}")
        self.passage_id = passage_id


class IndexLoadError(Exception):
    """Raised when an index file is truncated, corrupted or unreadable."""


class IndexVersionError(IndexLoadError):
    pass


@dataclass(eq=False)
class PassageIndex:
    terms: list[str]
    offsets: np.ndarray  # int64[V + 1] into the postings arrays
    post_docs: np.ndarray  # int32[P], ascending within each term
    post_tfs: np.ndarray  # int32[P]
    doc_lengths: np.ndarray  # int32[N]
    doc_ids: list[str]
    params: BM25Params = field(default_factory=BM25Params)
    tokenizer: Tokenizer = DEFAULT_TOKENIZER

    def __post_init__(self) -> None:
        self.vocab = {t: i for i, t in enumerate(self.terms)}
        self.avg_doc_length = float(self.doc_lengths.mean()) if len(self.doc_lengths) else 0.0
        self.norms = doc_norms(self.doc_lengths, self.avg_doc_length, self.params)
        self._idf: dict[int, float] = {}

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    def postings(self, term: str) -> tuple[np.ndarray, np.ndarray]:
        tid = self.vocab.get(term)
        if tid is None:
            empty = np.empty(0, dtype=np.int32)
            return empty, empty
        lo, hi = self.offsets[tid], self.offsets[tid + 1]
        return self.post_docs[lo:hi], self.post_tfs[lo:hi]

    def df(self, term: str) -> int:
        tid = self.vocab.get(term)
        return 0 if tid is None else int(self.offsets[tid + 1] - self.offsets[tid])

    def term_idf(self, tid: int) -> float:
        value = self._idf.get(tid)
        if value is None:
            df = int(self.offsets[tid + 1] - self.offsets[tid])
            value = self._idf[tid] = idf(self.doc_count, df)
        return value


def read_corpus_tsv(path: str | Path) -> Iterator[tuple[str, str, str]]:
    """Yield ``(id, text, title)`` rows from a retrieval-corpus TSV with header."""
    csv.field_size_limit(sys.maxsize)
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f, delimiter="\t", quoting=csv.QUOTE_MINIMAL)
        header = next(reader, None)
        if header is None:
            return
        cols = {name: i for i, name in enumerate(header)}
        i_id, i_text = cols.get("id", 0), cols.get("text", 1)
        i_title = cols.get("title")
        for row in reader:
            if not row:
                continue
            title = row[i_title] if i_title is not None and i_title < len(row) else ""
            yield row[i_id], row[i_text], title


def write_corpus_tsv(path: str | Path, rows: Iterable[tuple[str, str, str]]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(["id", "text", "title"])
        for pid, text, title in rows:
            writer.writerow([pid, text, title])
            n += 1
    return n


class _RunWriter:
    """Accumulates (term, doc, tf) triples in bounded runs, optionally spilled to disk."""

    def __init__(self, run_size: int, spill_dir: str | Path | None):
        self.run_size = run_size
        self.spill_dir = spill_dir
        self.runs: list = []
        self._tokens: list[int] = []
        self._doc_sizes: list[int] = []
        self._first_doc = 0

    def add(self, term_ids: Iterable[int], size: int) -> None:
        self._tokens.extend(term_ids)
        self._doc_sizes.append(size)
        if len(self._doc_sizes) >= self.run_size:
            self.flush()

    def flush(self) -> None:
        if not self._doc_sizes:
            return
        terms = np.fromiter(self._tokens, dtype=np.int64, count=len(self._tokens))
        docs = np.repeat(
            np.arange(self._first_doc, self._first_doc + len(self._doc_sizes), dtype=np.int64),
            self._doc_sizes,
        )
        keys, counts = np.unique((docs << 31) | terms, return_counts=True)
        run_docs = (keys >> 31).astype(np.int32)
        run_terms = (keys & ((1 << 31) - 1)).astype(np.int32)
        order = np.argsort(run_terms, kind="stable")
        run = (run_terms[order], run_docs[order], counts[order].astype(np.int32))
        if self.spill_dir is not None:
            fd, name = tempfile.mkstemp(suffix=".npz", dir=self.spill_dir)
            with open(fd, "wb") as f:
                np.savez(f, terms=run[0], docs=run[1], tfs=run[2])
            self.runs.append(name)
        else:
            self.runs.append(run)
        self._first_doc += len(self._doc_sizes)
        self._tokens = []
        self._doc_sizes = []

    def load_runs(self) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        for run in self.runs:
            if isinstance(run, str):
                with np.load(run) as z:
                    yield z["terms"], z["docs"], z["tfs"]
                Path(run).unlink()
            else:
                yield run


def build_index(
    corpus: Iterable[tuple[str, str]],
    params: BM25Params = BM25Params(),
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    run_size: int = 50_000,
    spill_dir: str | Path | None = None,
    pretokenized: bool = False,
) -> PassageIndex:
    """Build an index from ``(passage_id, text)`` pairs.

    With ``pretokenized`` the second element is already a token list produced
    by ``tokenizer``.

    Documents are consumed in sorted runs of ``run_size`` passages; each run is
    term-sorted and (with ``spill_dir``) written to disk before the runs are
    merged into the final postings.
    """
    # Unseen terms get the next id; the defaultdict keeps the lookup in C.
    vocab: defaultdict[str, int] = defaultdict()
    vocab.default_factory = vocab.__len__
    lookup = vocab.__getitem__
    seen: set[str] = set()
    doc_ids: list[str] = []
    doc_lengths: list[int] = []
    runs = _RunWriter(run_size, spill_dir)
    for pid, text in corpus:
        if pid in seen:
            raise DuplicatePassageError(pid)
        seen.add(pid)
        doc_ids.append(pid)
        tokens = text if pretokenized else tokenizer(text)
        doc_lengths.append(len(tokens))
        runs.add(map(lookup, tokens), len(tokens))
    runs.flush()

    terms = sorted(vocab)
    rank = np.empty(len(vocab), dtype=np.int32)
    rank[[vocab[t] for t in terms]] = np.arange(len(terms), dtype=np.int32)

    # Runs cover ascending document ranges, so a stable sort on the remapped
    # term id yields postings that are term-major and doc-ascending.
    parts_t, parts_d, parts_f = [], [], []
    for t, d, f in runs.load_runs():
        parts_t.append(rank[t])
        parts_d.append(d)
        parts_f.append(f)
    if parts_t:
        all_t = np.concatenate(parts_t)
        order = np.argsort(all_t, kind="stable")
        all_t = all_t[order]
        post_docs = np.concatenate(parts_d)[order]
        post_tfs = np.concatenate(parts_f)[order]
    else:
        all_t = np.empty(0, dtype=np.int32)
        post_docs = np.empty(0, dtype=np.int32)
        post_tfs = np.empty(0, dtype=np.int32)
    offsets = np.zeros(len(terms) + 1, dtype=np.int64)
    np.cumsum(np.bincount(all_t, minlength=len(terms)), out=offsets[1:])
    return PassageIndex(
        terms=terms,
        offsets=offsets,
        post_docs=post_docs.astype(np.int32, copy=False),
        post_tfs=post_tfs.astype(np.int32, copy=False),
        doc_lengths=np.asarray(doc_lengths, dtype=np.int32),
        doc_ids=doc_ids,
        params=params,
        tokenizer=tokenizer,
    )


def score(index: PassageIndex, query_tokens: Sequence[str], ordinal: int) -> float:
    """BM25 score of one document; absent terms contribute nothing."""
    k1 = index.params.k1
    norm = float(index.norms[ordinal])
    total = 0.0
    for tok in query_tokens:
        tid = index.vocab.get(tok)
        if tid is None:
            continue
        lo, hi = index.offsets[tid], index.offsets[tid + 1]
        docs = index.post_docs[lo:hi]
        pos = int(np.searchsorted(docs, ordinal))
        if pos < len(docs) and docs[pos] == ordinal:
            tf = float(index.post_tfs[lo + pos])
            total += term_weight(index.term_idf(tid), tf, norm, k1)
    return total


def _select_top(ids: list[str], scores: np.ndarray, ordinals: np.ndarray, k: int) -> RankedList:
    if len(scores) > k:
        threshold = np.partition(scores, len(scores) - k)[len(scores) - k]
        keep = np.flatnonzero(scores >= threshold)
    else:
        keep = np.arange(len(scores))
    best = heapq.nsmallest(
        k, ((-float(scores[i]), ids[ordinals[i]]) for i in keep)
    )
    return [(pid, -neg) for neg, pid in best]


def accumulate(index: PassageIndex, query_tokens: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Scores of every document matching at least one query token.

    Returns ``(ordinals, scores)`` with ordinals ascending. Each candidate's
    score is summed term by term in query order, the same order :func:`score`
    uses, so both paths agree bit for bit.
    """
    tids = [index.vocab[t] for t in query_tokens if t in index.vocab]
    if not tids:
        return np.empty(0, dtype=np.int32), np.empty(0, dtype=np.float64)
    k1 = index.params.k1
    lists = [
        (tid, index.post_docs[index.offsets[tid] : index.offsets[tid + 1]],
         index.post_tfs[index.offsets[tid] : index.offsets[tid + 1]])
        for tid in tids
    ]
    if len(lists) > 1:
        cand = np.unique(np.concatenate([docs for _, docs, _ in lists]))
    else:
        cand = lists[0][1]
    scores = np.zeros(len(cand), dtype=np.float64)
    norms = index.norms[cand]
    for tid, docs, tfs in lists:
        pos = np.searchsorted(cand, docs)
        scores[pos] += term_weight(index.term_idf(tid), tfs.astype(np.float64), norms[pos], k1)
    return cand, scores


def top_k(index: PassageIndex, query: str, k: int) -> RankedList:
    """Exact top-k passages by BM25, ties broken by ascending passage id.

    Document-at-a-time over the union of the query terms' postings, then a
    bounded heap keeps the best ``k``. No pruning: every matching document is
    scored.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    cand, scores = accumulate(index, index.tokenizer(query))
    if not len(cand):
        return []
    return _select_top(index.doc_ids, scores, cand, k)


def top_k_many(
    index: PassageIndex, queries: Sequence[str], k: int, threads: int = 1
) -> list[RankedList]:
    """Run many queries, sharded over ``threads`` workers; output order follows input."""
    if threads <= 1:
        return [top_k(index, q, k) for q in queries]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda q: top_k(index, q, k), queries, chunksize=64))


def save_index(index: PassageIndex, path: str | Path) -> None:
    n, v, p = index.doc_count, len(index.terms), len(index.post_docs)
    id_bytes = [s.encode("utf-8") for s in index.doc_ids]
    term_bytes = [s.encode("utf-8") for s in index.terms]
    deltas = index.post_docs.astype(np.uint32)
    if p:
        deltas[1:] -= index.post_docs[:-1].astype(np.uint32)
        starts = index.offsets[:-1][np.diff(index.offsets) > 0]
        deltas[starts] = index.post_docs[starts].astype(np.uint32)
    parts = [
        MAGIC,
        struct.pack("<II", FORMAT_VERSION, index.tokenizer.flags),
        struct.pack("<dd", index.params.k1, index.params.b),
        struct.pack("<QQQ", n, v, p),
        np.asarray([len(b) for b in id_bytes], dtype="<u4").tobytes(),
        b"".join(id_bytes),
        index.doc_lengths.astype("<u4").tobytes(),
        np.asarray([len(b) for b in term_bytes], dtype="<u4").tobytes(),
        b"".join(term_bytes),
        np.diff(index.offsets).astype("<u4").tobytes(),
        deltas.astype("<u4").tobytes(),
        index.post_tfs.astype("<u4").tobytes(),
    ]
    payload = b"".join(parts)
    with open(path, "wb") as f:
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload)))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IndexLoadError("index file is truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<u4")

    def strings(self, count: int) -> list[str]:
        lengths = self.array(count)
        blob = self.take(int(lengths.sum()))
        out, at = [], 0
        for ln in lengths.tolist():
            out.append(blob[at : at + ln].decode("utf-8"))
            at += ln
        return out


def load_index(path: str | Path) -> PassageIndex:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IndexLoadError(f"cannot read index {path}: {exc}") from exc
    if len(data) < len(MAGIC) + 12 or data[: len(MAGIC)] != MAGIC:
        raise IndexLoadError(f"{path} is not a BM25 index (bad magic header)")
    version = struct.unpack_from("<I", data, len(MAGIC))[0]
    if version != FORMAT_VERSION:
        raise IndexVersionError(f"unsupported index version {version}, expected {FORMAT_VERSION}")
    payload, trailer = data[:-4], data[-4:]
    if struct.unpack("<I", trailer)[0] != zlib.crc32(payload):
        raise IndexLoadError(f"{path} is truncated or corrupted (checksum mismatch)")
    r = _Reader(payload)
    r.take(len(MAGIC) + 4)
    (flags,) = struct.unpack("<I", r.take(4))
    k1, b = struct.unpack("<dd", r.take(16))
    n, v, p = struct.unpack("<QQQ", r.take(24))
    doc_ids = r.strings(n)
    doc_lengths = r.array(n).astype(np.int32)
    terms = r.strings(v)
    dfs = r.array(v).astype(np.int64)
    deltas = r.array(p).astype(np.int64)
    tfs = r.array(p).astype(np.int32)
    if r.pos != len(payload):
        raise IndexLoadError(f"{path} has {len(payload) - r.pos} unexpected trailing bytes")
    offsets = np.zeros(v + 1, dtype=np.int64)
    np.cumsum(dfs, out=offsets[1:])
    if offsets[-1] != p:
        raise IndexLoadError("posting counts disagree with document frequencies")
    cs = np.cumsum(deltas)
    nonempty = dfs > 0
    starts = offsets[:-1][nonempty]
    base = cs[starts] - deltas[starts]
    docs = (cs - np.repeat(base, dfs[nonempty])).astype(np.int32)
    return PassageIndex(
        terms=terms,
        offsets=offsets,
        post_docs=docs,
        post_tfs=tfs,
        doc_lengths=doc_lengths,
        doc_ids=doc_ids,
        params=BM25Params(k1, b),
        tokenizer=Tokenizer.from_flags(flags),
    )
