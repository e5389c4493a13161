"""Cloze question generation: entity tagging, evidence filtering, answer sampling,
interrogative-phrase replacement and context selection."""

from __future__ import annotations

import hashlib
import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Protocol, Sequence

from .bm25 import BM25Params
from .evalkit import passage_hit
from .chunker import DEFAULT_CONFIGS, ChunkConfig, chunk_document, select_context
from .fetchref import Evidence, url_key
from .wikiparse import StatementRef

ENTITY_TYPES = (
    "CARDINAL", "DATE", "EVENT", "FAC", "GPE", "LANGUAGE", "LAW", "LOC", "MONEY", "NORP",
    "ORDINAL", "ORG", "PERCENT", "PERSON", "PRODUCT", "QUANTITY", "TIME", "WORK_OF_ART",
)

DROP_REASONS = (
    "missing_annotation", "no_entity", "no_entity_in_evidence", "no_blocks",
    "weak_context", "answer_not_in_block",
)


@dataclass(frozen=True)
class EntityMention:
    surface: str
    etype: str
    span: tuple[int, int]

    def __post_init__(self) -> None:
        if self.etype not in ENTITY_TYPES:
            raise ValueError(f"unknown entity type {self.etype!r}")


class TableError(ValueError):
    """The reformation table is missing a type, names an unknown one, or has an empty phrase list."""


class ReformationTable(dict):
    """Entity type -> candidate interrogative phrases."""

    def __init__(self, mapping: dict[str, Sequence[str]]):
        super().__init__({k: tuple(v) for k, v in mapping.items()})
        missing = [t for t in ENTITY_TYPES if t not in self]
        if missing:
            raise TableError(f"reformation table lacks types: {', '.join(missing)}")
        unknown = sorted(set(self) - set(ENTITY_TYPES))
        if unknown:
            raise TableError(f"unknown entity types: {', '.join(unknown)}")
        empty = [t for t, v in self.items() if not v]
        if empty:
            raise TableError(f"empty phrase list for: {', '.join(empty)}")

    @classmethod
    def parse(cls, text: str) -> "ReformationTable":
        mapping: dict[str, list[str]] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            etype, sep, phrases = line.partition("=")
            if not sep:
                raise TableError(f"line {lineno}: expected TYPE = phrase, phrase")
            mapping[etype.strip()] = [p.strip().strip('"') for p in phrases.split(",") if p.strip()]
        return cls(mapping)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ReformationTable":
        if path is None:
            return default_table()
        return cls.parse(Path(path).read_text(encoding="utf-8"))


@lru_cache(maxsize=1)
def default_table() -> ReformationTable:
    return ReformationTable.parse(_data_text("reformation_table.txt"))


def _data_text(name: str) -> str:
    return resources.files("cmore.data").joinpath(name).read_text("utf-8")


def _data_lines(name: str) -> list[str]:
    return [
        line.strip() for line in _data_text(name).splitlines()
        if line.strip() and not line.startswith("#")
    ]


# ---------------------------------------------------------------------------
# Taggers


class MissingAnnotation(KeyError):
    pass


class EntityTagger(Protocol):
    def tag(self, statement: str, statement_id: str | None = None) -> list[EntityMention]: ...


def resolve_overlaps(mentions: Iterable[EntityMention]) -> list[EntityMention]:
    """Greedy left-to-right, longest-first selection of non-overlapping mentions."""
    chosen: list[EntityMention] = []
    end = -1
    for m in sorted(mentions, key=lambda m: (m.span[0], -(m.span[1] - m.span[0]))):
        if m.span[0] >= end:
            chosen.append(m)
            end = m.span[1]
    return chosen


class AnnotationTagger:
    """Reads precomputed entity spans from a JSONL sidecar.

    Each line: ``{"id": <statement id>, "entities": [{"start", "end", "label"}]}``
    where offsets index the statement text. Spans whose label is outside the
    closed type set, or that fall outside the statement, are ignored.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.annotations: dict[str, list[dict]] = {}
        with open(self.path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    rec = json.loads(line)
                    self.annotations[str(rec["id"])] = rec.get("entities", [])

    def tag(self, statement: str, statement_id: str | None = None) -> list[EntityMention]:
        if statement_id is None or statement_id not in self.annotations:
            raise MissingAnnotation(statement_id)
        out = []
        for ent in self.annotations[statement_id]:
            start, end, label = int(ent["start"]), int(ent["end"]), ent["label"]
            if label not in ENTITY_TYPES or not 0 <= start < end <= len(statement):
                continue
            out.append(EntityMention(statement[start:end], label, (start, end)))
        return resolve_overlaps(out)


_MONTHS = (
    "January|February|March|April|May|June|July|August|September|October|November|December|"
    "Jan\\.|Feb\\.|Mar\\.|Apr\\.|Aug\\.|Sept?\\.|Oct\\.|Nov\\.|Dec\\."
)
_NUM_WORDS = (
    "one|two|three|four|five|six|seven|eight|nine|ten|eleven|twelve|thirteen|fourteen|fifteen|"
    "sixteen|seventeen|eighteen|nineteen|twenty|thirty|forty|fifty|sixty|seventy|eighty|ninety|"
    "hundred|thousand|dozen|dozens|hundreds|thousands|millions"
)
_NUM = rf"(?:\d{{1,3}}(?:,\d{{3}})+|\d+(?:\.\d+)?|(?:{_NUM_WORDS})(?:[- ](?:{_NUM_WORDS}))*)"
_SCALE = r"(?:\s(?:million|billion|trillion|thousand))?"
_UNITS = (
    "km|kilometres|kilometers|kilometre|kilometer|mi|miles|mile|m|metres|meters|metre|meter|cm|mm|"
    "ft|feet|foot|inches|inch|kg|kilograms|kilogram|g|grams|tonnes|tons|tonne|ton|lb|lbs|pounds|"
    "acres|acre|hectares|hectare|litres|liters|gallons|knots|mph|km/h|square\\s(?:kilometres|kilometers|miles|metres|feet)"
)
_DATE_UNITS = "days|day|weeks|week|months|month|years|year|decades|decade|centuries|century"
_TIME_UNITS = "hours|hour|minutes|minute|seconds|second"
_ORDINAL_WORDS = (
    "first|second|third|fourth|fifth|sixth|seventh|eighth|ninth|tenth|eleventh|twelfth|"
    "twentieth|hundredth"
)
_YEAR_PREP = r"(?:in|since|by|until|till|from|during|of|before|after|around|circa|c\.|early|late|mid)"

# (label, pattern, group holding the mention). Order matters only through
# the overlap resolver's longest-first rule; ties go to the earlier pattern.
_RULES: list[tuple[str, re.Pattern, int]] = [
    ("MONEY", re.compile(rf"(?:US|A|C)?[$£€¥]\s?\d[\d,]*(?:\.\d+)?{_SCALE}"), 0),
    ("MONEY", re.compile(rf"\b{_NUM}{_SCALE}\s(?:dollars|euros|pounds sterling|yen|rupees|francs)\b", re.I), 0),
    ("PERCENT", re.compile(rf"\b{_NUM}\s?(?:%|percent\b|per cent\b)", re.I), 0),
    ("DATE", re.compile(rf"\b\d{{1,2}}\s(?:{_MONTHS})\s\d{{4}}\b"), 0),
    ("DATE", re.compile(rf"\b(?:{_MONTHS})\s\d{{1,2}},?\s\d{{4}}\b"), 0),
    ("DATE", re.compile(rf"\b(?:{_MONTHS})\s\d{{4}}\b"), 0),
    ("DATE", re.compile(rf"\b\d{{1,2}}\s(?:{_MONTHS})(?![\w])"), 0),
    ("DATE", re.compile(rf"\b(?:{_MONTHS})\s\d{{1,2}}\b(?!,?\s\d)"), 0),
    ("DATE", re.compile(r"\b(?:1[0-9]|20)\d0s\b"), 0),
    ("DATE", re.compile(rf"\b{_YEAR_PREP}\s((?:1[0-9]|20)\d\d)\b(?!\s*[%$])", re.I), 1),
    ("DATE", re.compile(r"\b((?:1[0-9]|20)\d\d)(?=\s*[,.;:)]|\s*$)"), 1),
    ("DATE", re.compile(rf"\b{_NUM}\s(?:{_DATE_UNITS})\b", re.I), 0),
    ("DATE", re.compile(r"\b(?:Monday|Tuesday|Wednesday|Thursday|Friday|Saturday|Sunday)\b"), 0),
    ("TIME", re.compile(r"\b\d{1,2}(?::\d{2})?\s?(?:a\.m\.|p\.m\.|am\b|pm\b)", re.I), 0),
    ("TIME", re.compile(r"\b\d{1,2}:\d{2}\b"), 0),
    ("TIME", re.compile(rf"\b{_NUM}\s(?:{_TIME_UNITS})\b", re.I), 0),
    ("TIME", re.compile(r"\b(?:noon|midnight)\b", re.I), 0),
    ("QUANTITY", re.compile(rf"\b{_NUM}{_SCALE}\s?(?:{_UNITS})(?![\w/])", re.I), 0),
    ("ORDINAL", re.compile(r"\b\d+(?:st|nd|rd|th)\b"), 0),
    ("ORDINAL", re.compile(rf"\b(?:{_ORDINAL_WORDS})\b", re.I), 0),
    # A bare count followed by a word counts people or things.
    ("QUANTITY", re.compile(rf"\b({_NUM}{_SCALE})(?=\s[A-Za-z])", re.I), 1),
    ("CARDINAL", re.compile(rf"(?<![\w.,]){_NUM}{_SCALE}(?![\w]|[.,]\d)", re.I), 0),
]
_PRIORITY = {label: i for i, label in enumerate(["MONEY", "PERCENT", "DATE", "TIME", "QUANTITY", "ORDINAL", "CARDINAL"])}


class _Gazetteer:
    def __init__(self, entries: Iterable[str]):
        entries = sorted(set(entries), key=len, reverse=True)
        self.pattern = (
            re.compile(r"\b(?:" + "|".join(re.escape(e) for e in entries) + r")\b")
            if entries else None
        )

    def finditer(self, text: str) -> Iterator[re.Match]:
        return self.pattern.finditer(text) if self.pattern else iter(())


_CAP = r"[A-Z][\w'’-]*"


class RuleTagger:
    """Pattern rules for numeric and temporal types plus gazetteers for
    GPE, PERSON, ORG and LANGUAGE."""

    def __init__(self) -> None:
        self.gpe = _Gazetteer(_data_lines("gazetteer_gpe.txt"))
        person = _data_lines("gazetteer_person.txt")
        self.full_names = _Gazetteer(p for p in person if " " in p)
        given = [p for p in person if " " not in p]
        self.given = re.compile(
            rf"\b(?:{'|'.join(map(re.escape, given))})(?:\s(?:[A-Z]\.\s)?{_CAP}){{1,2}}\b"
        )
        org = _data_lines("gazetteer_org.txt")
        self.orgs = _Gazetteer(o for o in org if not o.startswith("@suffix"))
        suffixes = [o.split(None, 1)[1] for o in org if o.startswith("@suffix")]
        self.org_suffix = re.compile(
            rf"\b(?:(?:the\s)?{_CAP}\s(?:(?:of|for|and)\s)?)+(?:{'|'.join(map(re.escape, suffixes))})\b"
        )
        langs = _data_lines("gazetteer_language.txt")
        alt = "|".join(map(re.escape, langs))
        self.language = [
            re.compile(rf"\b({alt})(?=\slanguage\b)"),
            re.compile(rf"\b(?:in|into|speak|speaks|spoken|speaking)\s({alt})\b(?!\s[A-Z])"),
        ]

    def tag(self, statement: str, statement_id: str | None = None) -> list[EntityMention]:
        found: list[tuple[int, int, int, str]] = []  # start, end, priority, label
        for label, pattern, group in _RULES:
            for m in pattern.finditer(statement):
                s, e = m.span(group)
                if s < e:
                    found.append((s, e, _PRIORITY[label], label))
        named = [
            (self.orgs, "ORG"), (self.full_names, "PERSON"),
        ]
        for gaz, label in named:
            for m in gaz.finditer(statement):
                found.append((m.start(), m.end(), 10, label))
        for m in self.org_suffix.finditer(statement):
            s = m.start() + (4 if m.group().startswith("the ") else 0)
            found.append((s, m.end(), 11, "ORG"))
        for m in self.given.finditer(statement):
            found.append((m.start(), m.end(), 12, "PERSON"))
        for pattern in self.language:
            for m in pattern.finditer(statement):
                found.append((m.start(1), m.end(1), 13, "LANGUAGE"))
        for m in self.gpe.finditer(statement):
            found.append((m.start(), m.end(), 14, "GPE"))
        found.sort(key=lambda f: (f[0], -(f[1] - f[0]), f[2]))
        chosen, end = [], -1
        for s, e, _, label in found:
            if s >= end:
                chosen.append(EntityMention(statement[s:e], label, (s, e)))
                end = e
        return chosen


def tag_entities(statement: str, tagger: EntityTagger, statement_id: str | None = None) -> list[EntityMention]:
    return tagger.tag(statement, statement_id)


# ---------------------------------------------------------------------------
# Question construction


def filter_in_evidence(mentions: Sequence[EntityMention], evidence: Evidence | str) -> list[EntityMention]:
    """Mentions whose surface occurs in the evidence text, ignoring case."""
    text = (evidence.text if isinstance(evidence, Evidence) else evidence).lower()
    return [m for m in mentions if m.surface.lower() in text]


def sample_answer(mentions: Sequence[EntityMention], rng: random.Random) -> EntityMention | None:
    """Uniform pick; ``None`` when there is nothing to pick from."""
    if not mentions:
        return None
    return mentions[rng.randrange(len(mentions))]


def reform_question(
    statement: str, answer: EntityMention, table: ReformationTable, rng: random.Random
) -> tuple[str, str]:
    """Replace the answer span with a sampled interrogative phrase.

    Returns ``(question, phrase)``. Nothing outside the span changes except
    capitalization of the phrase when it opens the sentence.
    """
    phrases = table.get(answer.etype)
    if not phrases:
        raise TableError(f"no phrases for entity type {answer.etype}")
    start, end = answer.span
    if statement[start:end] != answer.surface:
        raise ValueError(f"answer {answer.surface!r} does not match statement span {answer.span}")
    phrase = phrases[rng.randrange(len(phrases))]
    shown = phrase[0].upper() + phrase[1:] if not statement[:start].strip() else phrase
    return statement[:start] + shown + statement[end:], phrase


def pair_seed(master_seed: int, pair_id: str) -> int:
    digest = hashlib.sha256(f"{master_seed}:{pair_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def locate_answer(answer: str, context: str) -> tuple[int, int] | None:
    """First case-insensitive occurrence of ``answer`` not inside a longer word."""
    needle = answer.lower()
    hay = context.lower()
    if not needle or len(hay) != len(context):
        # Lowercasing changed lengths (rare Unicode); fall back to a regex scan.
        m = re.search(rf"(?<!\w){re.escape(answer)}(?!\w)", context, re.IGNORECASE) if answer else None
        return m.span() if m else None
    at = hay.find(needle)
    while at >= 0:
        end = at + len(needle)
        before_ok = at == 0 or not (hay[at - 1].isalnum() and needle[0].isalnum())
        after_ok = end == len(hay) or not (hay[end].isalnum() and needle[-1].isalnum())
        if before_ok and after_ok:
            return at, end
        at = hay.find(needle, at + 1)
    return None


@dataclass
class QACTriplet:
    question: str
    answer: str
    answer_span: tuple[int, int]
    context: str
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "answer": self.answer,
            "answer_span": list(self.answer_span),
            "context": self.context,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QACTriplet":
        return cls(d["question"], d["answer"], tuple(d["answer_span"]), d["context"], d.get("meta", {}))


@dataclass(frozen=True)
class GenerationConfig:
    table: ReformationTable = field(default_factory=default_table)
    chunk_configs: tuple[ChunkConfig, ...] = DEFAULT_CONFIGS
    params: BM25Params = BM25Params()
    seed: int = 0


def build_triplet(
    pair: StatementRef, evidence: Evidence, tagger: EntityTagger, config: GenerationConfig
) -> tuple[QACTriplet | None, str]:
    """Run tag -> filter -> sample -> reform -> select context for one pair.

    Returns the triplet and ``"ok"``, or ``None`` and the drop reason.
    """
    try:
        mentions = tagger.tag(pair.statement, pair.statement_id)
    except MissingAnnotation:
        return None, "missing_annotation"
    if not mentions:
        return None, "no_entity"
    mentions = filter_in_evidence(mentions, evidence)
    if not mentions:
        return None, "no_entity_in_evidence"
    seed = pair_seed(config.seed, pair.pair_id)
    rng = random.Random(seed)
    answer = sample_answer(mentions, rng)
    assert answer is not None
    question, phrase = reform_question(pair.statement, answer, config.table, rng)

    doc_id = url_key(pair.url)[:16]
    blocks = chunk_document(evidence.text, config.chunk_configs, doc_id)
    if not blocks:
        return None, "no_blocks"
    selection = select_context(question, blocks, config.params)
    if selection.weak:
        return None, "weak_context"
    block = selection.block
    span = locate_answer(answer.surface, block.text)
    if span is None or not passage_hit(block.text, [answer.surface]):
        return None, "answer_not_in_block"
    triplet = QACTriplet(
        question=question,
        answer=block.text[span[0] : span[1]],
        answer_span=span,
        context=block.text,
        meta={
            "page_id": pair.page_id,
            "title": pair.title,
            "url": pair.url,
            "doc_id": doc_id,
            "block_id": block.block_id,
            "evidence_title": evidence.title,
            "statement": pair.statement,
            "etype": answer.etype,
            "phrase": phrase,
            "entity": answer.surface,
            "chunk": {"n": block.config.n, "m": block.config.m, "start": block.start},
            "seed": seed,
        },
    )
    return triplet, "ok"


def generate_triplets(
    items: Iterable[tuple[StatementRef, Evidence]],
    tagger: EntityTagger,
    config: GenerationConfig,
    tally: Counter | None = None,
    workers: int = 1,
) -> Iterator[QACTriplet]:
    """Triplets for a stream of reachable pairs, in input order.

    ``tally`` receives ``inputs``, ``emitted`` and one count per drop reason.
    """
    tally = tally if tally is not None else Counter()
    if workers > 1:
        from multiprocessing import get_context

        global _WORKER
        _WORKER = (tagger, config)
        with get_context("fork").Pool(workers) as pool:
            results = pool.imap(_worker_build, items, chunksize=64)
            yield from _count(results, tally)
    else:
        results = (build_triplet(p, e, tagger, config) for p, e in items)
        yield from _count(results, tally)


def _count(results, tally: Counter) -> Iterator[QACTriplet]:
    for triplet, reason in results:
        tally["inputs"] += 1
        if triplet is None:
            tally[reason] += 1
        else:
            tally["emitted"] += 1
            yield triplet


_WORKER: tuple | None = None


def _worker_build(item):
    tagger, config = _WORKER
    return build_triplet(item[0], item[1], tagger, config)
