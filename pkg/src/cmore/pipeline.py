"""Pipeline configuration and stage implementations.

Every stage reads its predecessors' artifacts from the output directory and
writes its own; a stage whose outputs all exist is skipped unless forced.
"""

from __future__ import annotations

import json
import logging
import time
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable

from . import bm25, chunker, densescore, evalkit, export, fetchref, qacgen, wikiparse
from .wikiparse import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

STAGES = ("extract", "fetch", "generate", "split", "index", "retrieve", "evaluate", "stats", "export")


class MissingArtifact(Exception):
    """A stage input does not exist (exit status 2)."""


class ConfigError(Exception):
    """Invalid configuration (exit status 2)."""


@dataclass
class PipelineConfig:
    out: Path = Path("cmore_out")
    dump: Path | None = None
    mirror: Path | None = None
    cache: Path | None = None
    table: Path | None = None
    tagger: str = "rule"
    annotations: Path | None = None
    chunk_configs: str = "128:64,256:128,512:256"
    k1: float = 1.2
    b: float = 0.75
    seed: int = 13
    dev_size: int = 0
    timeout: float = 10.0
    max_retries: int = 2
    per_host_delay: float = 1.0
    max_body_bytes: int = 5_000_000
    max_in_flight: int = 16
    negatives: int = 1
    retrieve_k: int = 100
    eval_ks: str = "20,100"
    retrieval_corpus: str = "wiki"
    dense_passages: Path | None = None
    dense_questions: Path | None = None
    threads: int = 1

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_pairs(cls, pairs: dict[str, str], base: "PipelineConfig | None" = None) -> "PipelineConfig":
        cfg = base or cls()
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in pairs.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(types[key], raw))
        return cfg

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict[str, str] | None = None) -> "PipelineConfig":
        pairs: dict[str, str] = {}
        if path is not None:
            p = Path(path)
            if not p.exists():
                raise ConfigError(f"config file not found: {p}")
            pairs.update(parse_config_text(p.read_text(encoding="utf-8")))
        pairs.update(overrides or {})
        cfg = cls.from_pairs(pairs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.dev_size < 0:
            raise ConfigError("dev_size must be >= 0")
        if self.tagger not in ("rule", "annotations"):
            raise ConfigError("tagger must be 'rule' or 'annotations'")
        if self.tagger == "annotations" and self.annotations is None:
            raise ConfigError("tagger=annotations requires an annotations file")
        if self.retrieval_corpus not in ("wiki", "contexts"):
            raise ConfigError("retrieval_corpus must be 'wiki' or 'contexts'")
        for name in ("dump", "mirror", "table", "annotations", "dense_passages", "dense_questions"):
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                raise ConfigError(f"{name} does not exist: {value}")
        try:
            self.chunk_list()
            self.fetch_policy()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def chunk_list(self) -> list[chunker.ChunkConfig]:
        configs = chunker.parse_configs(self.chunk_configs)
        if not configs:
            raise ValueError("at least one chunk config is required")
        return configs

    def fetch_policy(self) -> fetchref.FetchPolicy:
        return fetchref.FetchPolicy(
            timeout=self.timeout, max_retries=self.max_retries, per_host_delay=self.per_host_delay,
            max_body_bytes=self.max_body_bytes, offline_mirror=self.mirror, max_in_flight=self.max_in_flight,
        )

    def params(self) -> bm25.BM25Params:
        return bm25.BM25Params(self.k1, self.b)

    def ks(self) -> list[int]:
        return [int(k) for k in self.eval_ks.split(",") if k.strip()]


def _coerce(tp, raw: str):
    tp = str(tp)
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none")) and "None" in tp:
        return None
    if "Path" in tp:
        return Path(raw)
    if tp.startswith("int"):
        return int(raw)
    if tp.startswith("float"):
        return float(raw)
    return str(raw)


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment line."""
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config line {lineno}: expected key = value")
        pairs[key.strip()] = value.strip()
    return pairs


# ---------------------------------------------------------------------------
# Artifacts


@dataclass
class Artifacts:
    out: Path

    def __getattr__(self, name: str) -> Path:
        try:
            return self.out / _ARTIFACTS[name]
        except KeyError:
            raise AttributeError(name) from None


_ARTIFACTS = {
    "pairs": "statement_refs.jsonl",
    "extract_report": "extract_report.json",
    "wiki_passages": "wiki_passages.tsv",
    "reachable": "reachable.jsonl",
    "funnel": "funnel.json",
    "triplets": "triplets.jsonl",
    "generate_report": "generate_report.json",
    "train": "train.jsonl",
    "dev": "dev.jsonl",
    "wiki_index": "wiki.idx",
    "contexts": "contexts.tsv",
    "contexts_index": "contexts.idx",
    "retrieval": "retrieval.jsonl",
    "eval_json": "eval_report.json",
    "eval_txt": "eval_report.txt",
    "stats": "stats.json",
    "export_train": "cmore_train.json",
    "export_dev": "cmore_dev.json",
}

STAGE_IO: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "extract": ((), ("pairs", "extract_report", "wiki_passages")),
    "fetch": (("pairs",), ("reachable", "funnel")),
    "generate": (("reachable",), ("triplets", "generate_report")),
    "split": (("triplets",), ("train", "dev")),
    "index": (("wiki_passages", "train", "dev"), ("wiki_index", "contexts", "contexts_index")),
    "retrieve": (("dev",), ("retrieval",)),
    "evaluate": (("retrieval",), ("eval_json", "eval_txt")),
    "stats": (("triplets", "funnel", "generate_report"), ("stats",)),
    "export": (("train", "dev", "contexts", "contexts_index"), ("export_train", "export_dev")),
}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _evidence_cache(cfg: PipelineConfig) -> fetchref.EvidenceCache:
    return fetchref.EvidenceCache(cfg.cache or cfg.out / "evidence")


# ---------------------------------------------------------------------------
# Stages


def stage_extract(cfg: PipelineConfig, art: Artifacts) -> dict:
    if cfg.dump is None:
        raise MissingArtifact("extract needs a dump (set 'dump' in the config or pass --dump)")
    diagnostics: Counter = Counter()
    pages = pairs = passages = 0
    pair_records, passage_rows = [], []
    for page in wikiparse.parse_dump(cfg.dump, diagnostics, workers=cfg.threads):
        pages += 1
        for ref in wikiparse.extract_statement_refs(page):
            pair_records.append(ref.to_dict())
        for p in chunker.split_100w(page.title, page.body, id_prefix=f"{page.page_id}_"):
            passage_rows.append((p.id, p.text, p.title))
    pairs = write_jsonl(art.pairs, pair_records)
    passages = bm25.write_corpus_tsv(art.wiki_passages, passage_rows)
    report = {"pages": pages, "pairs": pairs, "passages": passages, "records": dict(sorted(diagnostics.items()))}
    _write_json(art.extract_report, report)
    return report


def stage_fetch(cfg: PipelineConfig, art: Artifacts) -> dict:
    report = fetchref.FunnelReport()
    pairs = wikiparse.read_statement_refs(art.pairs)
    kept = (
        p.to_dict()
        for p, _ in fetchref.filter_reachable(
            pairs, cfg.fetch_policy(), report, cache=_evidence_cache(cfg), threads=cfg.threads
        )
    )
    write_jsonl(art.reachable, kept)
    report.write(art.funnel)
    return report.to_dict()


def _tagger(cfg: PipelineConfig) -> qacgen.EntityTagger:
    if cfg.tagger == "annotations":
        return qacgen.AnnotationTagger(cfg.annotations)
    return qacgen.RuleTagger()


def stage_generate(cfg: PipelineConfig, art: Artifacts) -> dict:
    cache = _evidence_cache(cfg)
    gen = qacgen.GenerationConfig(
        table=qacgen.ReformationTable.load(cfg.table),
        chunk_configs=tuple(cfg.chunk_list()),
        params=cfg.params(),
        seed=cfg.seed,
    )

    def items():
        for rec in read_jsonl(art.reachable):
            ev = cache.get(rec["url"])
            if not isinstance(ev, fetchref.Evidence):
                raise MissingArtifact(f"evidence for {rec['url']} missing from cache {cache.root}")
            yield wikiparse.StatementRef.from_dict(rec), ev

    tally: Counter = Counter()
    triplets = qacgen.generate_triplets(items(), _tagger(cfg), gen, tally, workers=cfg.threads)
    write_jsonl(art.triplets, (t.to_dict() for t in triplets))
    report = {"inputs": tally["inputs"], "emitted": tally["emitted"],
              "drops": {r: tally[r] for r in qacgen.DROP_REASONS if tally[r]}}
    _write_json(art.generate_report, report)
    return report


def stage_split(cfg: PipelineConfig, art: Artifacts) -> dict:
    n_train, n_dev = export.split_file(art.triplets, art.train, art.dev, cfg.dev_size, cfg.seed)
    return {"train": n_train, "dev": n_dev}


def _read_triplets(*paths: Path) -> list[qacgen.QACTriplet]:
    return [qacgen.QACTriplet.from_dict(r) for p in paths for r in read_jsonl(p)]


def stage_index(cfg: PipelineConfig, art: Artifacts) -> dict:
    params = cfg.params()
    t0 = time.perf_counter()
    wiki = bm25.build_index(
        ((pid, text) for pid, text, _ in bm25.read_corpus_tsv(art.wiki_passages)), params
    )
    bm25.save_index(wiki, art.wiki_index)
    wiki_secs = time.perf_counter() - t0

    rows: dict[str, tuple[str, str]] = {}
    for t in _read_triplets(art.train, art.dev):
        rows.setdefault(export.context_passage_id(t), (t.context, export.context_title(t)))
    ordered = sorted(rows.items())
    bm25.write_corpus_tsv(art.contexts, ((pid, text, title) for pid, (text, title) in ordered))
    ctx = bm25.build_index(((pid, text) for pid, (text, _) in ordered), params)
    bm25.save_index(ctx, art.contexts_index)
    return {
        "wiki_passages": wiki.doc_count,
        "wiki_terms": len(wiki.terms),
        "wiki_build_seconds": round(wiki_secs, 3),
        "context_blocks": ctx.doc_count,
    }


def stage_retrieve(cfg: PipelineConfig, art: Artifacts) -> dict:
    dev = _read_triplets(art.dev)
    questions = [t.question for t in dev]
    if cfg.dense_passages is not None:
        if cfg.dense_questions is None:
            raise ConfigError("dense retrieval needs both dense_passages and dense_questions")
        store = densescore.load_vectors(cfg.dense_passages)
        qstore = densescore.load_vectors(cfg.dense_questions)
        qrow = {qid: i for i, qid in enumerate(qstore.ids)}
        ranked = []
        for i in range(len(dev)):
            if str(i) not in qrow:
                raise MissingArtifact(f"no question vector for dev question {i}")
            ranked.append(densescore.top_k_dense(
                qstore.vectors[qrow[str(i)]], store, cfg.retrieve_k, partitions=max(1, cfg.threads),
                threads=cfg.threads,
            ))
        method = "dense"
    else:
        index_path = art.wiki_index if cfg.retrieval_corpus == "wiki" else art.contexts_index
        if not index_path.exists():
            raise MissingArtifact(f"missing index {index_path} (run the index stage)")
        index = bm25.load_index(index_path)
        ranked = bm25.top_k_many(index, questions, cfg.retrieve_k, threads=cfg.threads)
        method = "bm25"
    write_jsonl(art.retrieval, (
        {"question": t.question, "answers": [t.answer],
         "retrieved": [{"id": pid, "score": s} for pid, s in hits]}
        for t, hits in zip(dev, ranked)
    ))
    return {"questions": len(dev), "method": method, "corpus": cfg.retrieval_corpus}


def stage_evaluate(cfg: PipelineConfig, art: Artifacts) -> dict:
    cases = evalkit.read_cases(art.retrieval)
    corpus = art.wiki_passages if cfg.retrieval_corpus == "wiki" else art.contexts
    if not corpus.exists():
        raise MissingArtifact(f"missing passage corpus {corpus}")
    needed = {pid for c in cases for pid, _ in c.retrieved}
    passages = {pid: text for pid, text, _ in bm25.read_corpus_tsv(corpus) if pid in needed}
    if not cases:
        report = {"case_count": 0, "accuracy": {}, "note": "no dev questions"}
        _write_json(art.eval_json, report)
        art.eval_txt.write_text("no dev questions\n", encoding="utf-8")
        return report
    result = evalkit.topk_accuracy(cases, cfg.ks(), passages)
    art.eval_json.write_text(result.to_json() + "\n", encoding="utf-8")
    art.eval_txt.write_text(result.table(), encoding="utf-8")
    return {"case_count": result.case_count, "accuracy": result.accuracy}


def stage_stats(cfg: PipelineConfig, art: Artifacts) -> dict:
    funnel = json.loads(art.funnel.read_text(encoding="utf-8"))
    gen = json.loads(art.generate_report.read_text(encoding="utf-8"))
    totals = {f"fetch:{k}": v for k, v in funnel["drops"].items()}
    totals.update({f"generate:{k}": v for k, v in gen["drops"].items()})
    stats = evalkit.dataset_stats(read_jsonl(art.triplets), totals)
    out = {
        "pairs_in": funnel["input"],
        "pairs_reachable": funnel["output"],
        "triplets": stats.count,
        "question_words": stats.question_words,
        "answer_words": stats.answer_words,
        "context_words": stats.context_words,
        "entity_types": stats.entity_types,
        "drops": stats.funnel,
    }
    if art.train.exists() and art.dev.exists():
        out["split"] = {
            "train": sum(1 for _ in read_jsonl(art.train)),
            "dev": sum(1 for _ in read_jsonl(art.dev)),
        }
    _write_json(art.stats, out)
    return out


def stage_export(cfg: PipelineConfig, art: Artifacts) -> dict:
    index = bm25.load_index(art.contexts_index)
    passages = {pid: (text, title) for pid, text, title in bm25.read_corpus_tsv(art.contexts)}
    counts = {}
    for name, src, dst in (("train", art.train, art.export_train), ("dev", art.dev, art.export_dev)):
        tally: Counter = Counter()
        records = export.trainer_records(_read_triplets(src), index, passages, cfg.negatives, tally)
        counts[name] = export.write_json_array(dst, records)
        counts[f"{name}_duplicates"] = tally["duplicate"]
    return counts


RUNNERS: dict[str, Callable[[PipelineConfig, Artifacts], dict]] = {
    "extract": stage_extract,
    "fetch": stage_fetch,
    "generate": stage_generate,
    "split": stage_split,
    "index": stage_index,
    "retrieve": stage_retrieve,
    "evaluate": stage_evaluate,
    "stats": stage_stats,
    "export": stage_export,
}


def run_stage(stage: str, cfg: PipelineConfig, force: bool = False) -> dict | None:
    """Run one stage. Returns its summary, or ``None`` when already complete."""
    art = Artifacts(Path(cfg.out))
    inputs, outputs = STAGE_IO[stage]
    for name in inputs:
        path = getattr(art, name)
        if not path.exists():
            raise MissingArtifact(f"{stage}: missing input artifact {path}")
    if not force and all(getattr(art, name).exists() for name in outputs):
        logger.info("%s: outputs present, skipping (use --force to rerun)", stage)
        return None
    t0 = time.perf_counter()
    summary = RUNNERS[stage](cfg, art)
    logger.info("%s done in %.1fs: %s", stage, time.perf_counter() - t0, summary)
    return summary
