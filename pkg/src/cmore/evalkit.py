"""Top-k retrieval accuracy, exact match, and corpus statistics."""

from __future__ import annotations

import json
import re
import statistics
import string
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, strip punctuation and articles, collapse whitespace."""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def passage_hit(passage_text: str, gold_answers: Iterable[str]) -> bool:
    """True if some normalized answer occurs on token boundaries in the normalized passage."""
    passage = f" {normalize_answer(passage_text)} "
    if passage == "  ":
        return False
    for answer in gold_answers:
        norm = normalize_answer(answer)
        if norm and f" {norm} " in passage:
            return True
    return False


def exact_match(prediction: str, gold_answers: Iterable[str]) -> bool:
    pred = normalize_answer(prediction)
    return any(pred == normalize_answer(g) for g in gold_answers)


@dataclass
class EvalCase:
    question: str
    gold_answers: list[str]
    retrieved: list[tuple[str, float]] = field(default_factory=list)
    predicted_answer: str | None = None

    def __post_init__(self) -> None:
        if not self.gold_answers:
            raise ValueError(f"case {self.question!r} has no gold answers")


def first_hit_rank(case: EvalCase, passages: Mapping[str, str]) -> int | None:
    """1-based rank of the first retrieved passage containing an answer."""
    for rank, (pid, _) in enumerate(case.retrieved, start=1):
        text = passages.get(pid)
        if text is not None and passage_hit(text, case.gold_answers):
            return rank
    return None


@dataclass
class EvalReport:
    accuracy: dict[int, float]
    case_count: int
    hit_ranks: list[int | None]
    exact_match: float | None = None

    def to_json(self) -> str:
        d = asdict(self)
        d["accuracy"] = {str(k): v for k, v in sorted(self.accuracy.items())}
        return json.dumps(d, indent=2)

    def table(self) -> str:
        rows = [("metric", "value")]
        rows += [(f"top-{k} accuracy", f"{v:.4f}") for k, v in sorted(self.accuracy.items())]
        if self.exact_match is not None:
            rows.append(("exact match", f"{self.exact_match:.4f}"))
        rows.append(("cases", str(self.case_count)))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{a:<{width}}  {b:>8}" for a, b in rows) + "\n"


def topk_accuracy(
    cases: Sequence[EvalCase], ks: Iterable[int] = (20, 100),
    passages: Mapping[str, str] | None = None,
    hit_ranks: Sequence[int | None] | None = None,
) -> EvalReport:
    """Fraction of cases whose first answer-bearing passage ranks within k.

    Hit ranks are computed from ``passages`` (id -> text) unless supplied
    directly. Retrieved lists shorter than k are taken as they are.
    """
    if not cases:
        raise ValueError("top-k accuracy is undefined for an empty case list")
    if hit_ranks is None:
        if passages is None:
            raise ValueError("need passage texts or precomputed hit ranks")
        hit_ranks = [first_hit_rank(c, passages) for c in cases]
    ranks = list(hit_ranks)
    n = len(cases)
    accuracy = {
        k: sum(1 for r in ranks if r is not None and r <= k) / n for k in sorted(set(ks))
    }
    em = None
    preds = [c for c in cases if c.predicted_answer is not None]
    if preds:
        em = sum(exact_match(c.predicted_answer, c.gold_answers) for c in preds) / len(preds)
    return EvalReport(accuracy=accuracy, case_count=n, hit_ranks=ranks, exact_match=em)


def read_cases(path: str | Path) -> list[EvalCase]:
    """Cases from JSONL ``{question, answers, retrieved: [{id, score}], prediction?}``."""
    cases = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            cases.append(
                EvalCase(
                    question=rec["question"],
                    gold_answers=list(rec["answers"]),
                    retrieved=[(str(r["id"]), float(r.get("score", 0.0))) for r in rec.get("retrieved", [])],
                    predicted_answer=rec.get("prediction"),
                )
            )
    return cases


def _length_summary(values: list[int]) -> dict[str, float]:
    if not values:
        return {"min": 0, "max": 0, "mean": 0.0, "median": 0.0}
    return {
        "min": min(values),
        "max": max(values),
        "mean": statistics.fmean(values),
        "median": float(statistics.median(values)),
    }


@dataclass
class DatasetStats:
    count: int = 0
    question_words: dict[str, float] = field(default_factory=dict)
    answer_words: dict[str, float] = field(default_factory=dict)
    context_words: dict[str, float] = field(default_factory=dict)
    entity_types: dict[str, int] = field(default_factory=dict)
    funnel: dict[str, int] = field(default_factory=dict)


def dataset_stats(triplets: Iterable, funnel: Mapping[str, int] | None = None) -> DatasetStats:
    """Counts, length distributions (in whitespace words) and an entity-type histogram.

    ``triplets`` may be QACTriplet objects or their JSON dicts.
    """
    q_len, a_len, c_len = [], [], []
    types: Counter[str] = Counter()
    for t in triplets:
        if not isinstance(t, Mapping):
            t = t.to_dict()
        q_len.append(len(t["question"].split()))
        a_len.append(len(t["answer"].split()))
        c_len.append(len(t["context"].split()))
        types[t["meta"]["etype"]] += 1
    return DatasetStats(
        count=len(q_len),
        question_words=_length_summary(q_len),
        answer_words=_length_summary(a_len),
        context_words=_length_summary(c_len),
        entity_types=dict(sorted(types.items())),
        funnel=dict(funnel or {}),
    )
