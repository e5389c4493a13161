"""Independent reference implementations used as test oracles.

These deliberately avoid the package's own scoring code paths: plain dict
counting, math.log, and full sorts.
"""

from __future__ import annotations

import math
import re
from collections import Counter

import numpy as np

_WORD = re.compile(r"[^\W_]+")


def naive_tokenize(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def brute_force_bm25(docs: list[tuple[str, list[str]]], query: list[str], k: int, k1=1.2, b=0.75):
    """Score every document and full-sort by (-score, id)."""
    n = len(docs)
    if n == 0:
        return []
    tfs = [Counter(toks) for _, toks in docs]
    df = Counter()
    for tf in tfs:
        df.update(tf.keys())
    avg = sum(len(t) for _, t in docs) / n
    ranked = []
    for (pid, toks), tf in zip(docs, tfs):
        s, hit = 0.0, False
        for term in query:
            f = tf.get(term, 0)
            if not f:
                continue
            hit = True
            idf = math.log(1 + (n - df[term] + 0.5) / (df[term] + 0.5))
            s += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * len(toks) / avg))
        if hit:
            ranked.append((-s, pid))
    ranked.sort()
    return [(pid, -neg) for neg, pid in ranked[:k]]


def dense_full_sort(ids: list[str], vectors: np.ndarray, query: np.ndarray, k: int):
    """float32 dot products summed strictly left to right, then a full sort."""
    prods = vectors.astype(np.float32) * query.astype(np.float32)
    scores = np.cumsum(prods, axis=1, dtype=np.float32)[:, -1]
    order = sorted(range(len(ids)), key=lambda i: (-float(scores[i]), ids[i]))
    return [(ids[i], float(scores[i])) for i in order[:k]]


def chunk_starts(length: int, n: int, m: int) -> list[int]:
    """Enumerate 0, m, 2m, ... until a block reaches the end of the document."""
    out = []
    s = 0
    while length > 0:
        out.append(s)
        if s + n >= length:
            break
        s += m
    return out


# Expected candidate sets, transcribed by hand from the published table.
TABLE = {
    "CARDINAL": {"what"},
    "DATE": {"when", "what time", "what date"},
    "EVENT": {"what event", "what", "which event"},
    "FAC": {"where", "what buildings"},
    "GPE": {"where", "what country"},
    "LANGUAGE": {"what language", "which language"},
    "LAW": {"which law", "what law"},
    "LOC": {"where", "what location", "which place", "what place"},
    "MONEY": {"how much money", "how much"},
    "NORP": {"what", "what groups", "where"},
    "ORDINAL": {"what rank", "what"},
    "ORG": {"which organization", "what organization", "what"},
    "PERCENT": {"what percent", "what percentage"},
    "PERSON": {"who", "which person"},
    "PRODUCT": {"what", "what product"},
    "QUANTITY": {"how many", "how much"},
    "TIME": {"when", "what time"},
    "WORK_OF_ART": {"what", "what title"},
}


_PUNCT_RE = re.compile(r"[^\w\s]")
_ARTICLE_RE = re.compile(r"\b(?:a|an|the)\b")


def answer_on_token_boundary(text: str, answer: str) -> bool:
    """Normalized answer tokens appear as a contiguous run of normalized text tokens."""

    def norm(s: str) -> list[str]:
        return _ARTICLE_RE.sub(" ", _PUNCT_RE.sub("", s.lower()).replace("_", "")).split()

    hay, needle = norm(text), norm(answer)
    if not needle:
        return False
    return any(hay[i : i + len(needle)] == needle for i in range(len(hay) - len(needle) + 1))


def independent_trainer_check(records: list) -> list[str]:
    """Structural and answer-containment checks written without the package's helpers."""
    problems = []
    ctx_keys = {"title", "text", "passage_id"}
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            problems.append(f"{i}: not an object")
            continue
        for key, kind in (("question", str), ("answers", list), ("positive_ctxs", list),
                          ("negative_ctxs", list), ("hard_negative_ctxs", list)):
            if not isinstance(rec.get(key), kind):
                problems.append(f"{i}: {key} missing or not {kind.__name__}")
        if problems and problems[-1].startswith(f"{i}:"):
            continue
        if not rec["answers"] or not all(isinstance(a, str) and a for a in rec["answers"]):
            problems.append(f"{i}: bad answers")
        if not rec["positive_ctxs"]:
            problems.append(f"{i}: no positive")
        for group in ("positive_ctxs", "negative_ctxs", "hard_negative_ctxs"):
            for ctx in rec[group]:
                if not ctx_keys <= set(ctx) or not all(isinstance(ctx[k], str) for k in ctx_keys):
                    problems.append(f"{i}: malformed {group} entry")
        for ctx in rec["positive_ctxs"]:
            if not any(answer_on_token_boundary(ctx["text"], a) for a in rec["answers"]):
                problems.append(f"{i}: positive lacks answer")
        for ctx in rec["hard_negative_ctxs"]:
            if any(answer_on_token_boundary(ctx["text"], a) for a in rec["answers"]):
                problems.append(f"{i}: hard negative contains answer")
    return problems
