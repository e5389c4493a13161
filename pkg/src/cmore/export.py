"""Train/dev splitting and export to the dual-encoder trainer's JSON schema."""

from __future__ import annotations

import hashlib
import json
import random
from collections import Counter
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .bm25 import PassageIndex, top_k
from .evalkit import passage_hit
from .qacgen import QACTriplet


@lru_cache(maxsize=1)
def trainer_schema() -> dict:
    return json.loads(resources.files("cmore.data").joinpath("trainer_schema.json").read_text("utf-8"))


def split_train_dev(n: int, dev_size: int, seed: int) -> tuple[list[int], list[int]]:
    """Indices of a uniform dev sample of exactly ``dev_size`` and its complement.

    Both lists keep input order.
    """
    if dev_size < 0:
        raise ValueError("dev_size must be non-negative")
    if dev_size > n:
        raise ValueError(f"dev_size {dev_size} exceeds the {n} available triplets")
    dev = set(random.Random(seed).sample(range(n), dev_size))
    train = [i for i in range(n) if i not in dev]
    return train, sorted(dev)


def split_file(src: str | Path, train_path: str | Path, dev_path: str | Path, dev_size: int, seed: int) -> tuple[int, int]:
    lines = [line for line in Path(src).read_text(encoding="utf-8").splitlines(keepends=True) if line.strip()]
    train, dev = split_train_dev(len(lines), dev_size, seed)
    Path(train_path).write_text("".join(lines[i] for i in train), encoding="utf-8")
    Path(dev_path).write_text("".join(lines[i] for i in dev), encoding="utf-8")
    return len(train), len(dev)


def context_passage_id(t: QACTriplet) -> str:
    return t.meta.get("block_id") or "ctx-" + hashlib.sha1(t.context.encode("utf-8")).hexdigest()[:16]


def context_title(t: QACTriplet) -> str:
    return t.meta.get("evidence_title") or t.meta.get("title", "")


def _doc_of(passage_id: str) -> str:
    return passage_id.partition("#")[0]


def hard_negatives(
    t: QACTriplet, index: PassageIndex, passages: Mapping[str, tuple[str, str]], count: int,
) -> list[dict]:
    """Best BM25 blocks from other documents that do not contain the answer."""
    if count <= 0 or index.doc_count == 0:
        return []
    own_doc = _doc_of(context_passage_id(t))
    depth = min(index.doc_count, max(4 * count + 8, 16))
    while True:
        out = []
        ranked = top_k(index, t.question, depth)
        for pid, score in ranked:
            if _doc_of(pid) == own_doc:
                continue
            text, title = passages[pid]
            if passage_hit(text, [t.answer]):
                continue
            out.append({"title": title, "text": text, "passage_id": pid, "score": score})
            if len(out) == count:
                return out
        if len(ranked) < depth or depth >= index.doc_count:
            return out
        depth = min(index.doc_count, depth * 4)


def trainer_records(
    triplets: Iterable[QACTriplet], index: PassageIndex, passages: Mapping[str, tuple[str, str]],
    negatives_per_q: int, tally: Counter | None = None,
) -> Iterator[dict]:
    """One trainer record per distinct triplet.

    Exact duplicates (same question, answer and context) are dropped, as are
    triplets whose context fails the token-boundary answer check.
    """
    tally = tally if tally is not None else Counter()
    seen: set[tuple[str, str, str]] = set()
    for t in triplets:
        key = (t.question, t.answer, t.context)
        if key in seen:
            tally["duplicate"] += 1
            continue
        seen.add(key)
        if not passage_hit(t.context, [t.answer]):
            tally["positive_without_answer"] += 1
            continue
        tally["exported"] += 1
        yield {
            "dataset": "cmore",
            "question": t.question,
            "answers": [t.answer],
            "positive_ctxs": [
                {"title": context_title(t), "text": t.context, "passage_id": context_passage_id(t)}
            ],
            "negative_ctxs": [],
            "hard_negative_ctxs": hard_negatives(t, index, passages, negatives_per_q),
        }


def write_json_array(path: str | Path, records: Iterable[dict]) -> int:
    """Stream records into one JSON array, one record per line."""
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        f.write("[")
        for rec in records:
            f.write(",\n" if n else "\n")
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True))
            n += 1
        f.write("\n]\n")
    return n


def validate_records(records: Iterable[dict]) -> list[str]:
    """Schema and answer-containment problems, one message per violation."""
    import jsonschema

    validator = jsonschema.Draft202012Validator(trainer_schema())
    problems = []
    for i, rec in enumerate(records):
        for err in validator.iter_errors(rec):
            problems.append(f"record {i}: {err.message}")
        answers = rec.get("answers", [])
        for ctx in rec.get("positive_ctxs", []):
            if not passage_hit(ctx.get("text", ""), answers):
                problems.append(f"record {i}: positive {ctx.get('passage_id')} lacks the answer")
        for ctx in rec.get("hard_negative_ctxs", []):
            if passage_hit(ctx.get("text", ""), answers):
                problems.append(f"record {i}: hard negative {ctx.get('passage_id')} contains the answer")
    return problems


def export_trainer_json(
    triplets_path: str | Path, index: PassageIndex, passages: Mapping[str, tuple[str, str]],
    negatives_per_q: int, out_path: str | Path, tally: Counter | None = None,
) -> int:
    """Write the trainer file for a triplet JSONL; returns the record count."""
    from .wikiparse import read_jsonl

    triplets = (QACTriplet.from_dict(r) for r in read_jsonl(triplets_path))
    return write_json_array(out_path, trainer_records(triplets, index, passages, negatives_per_q, tally))
