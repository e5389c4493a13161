"""Wikipedia dump parsing, markup stripping, sentence segmentation and citation mining."""

from __future__ import annotations

import bisect
import bz2
import gzip
import html
import io
import json
import logging
import re
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import IO, Iterable, Iterator
from urllib.parse import urlparse

logger = logging.getLogger(__name__)

MIN_STATEMENT_WORDS = 6
MAX_STATEMENT_WORDS = 120

# Placeholders standing in for <ref> elements while the rest of the markup is stripped.
_MARK_OPEN, _MARK_CLOSE = "\ue000", "\ue001"
_MARKER_RE = re.compile(f"{_MARK_OPEN}(\\d+){_MARK_CLOSE}")


@dataclass
class Citation:
    span: tuple[int, int]  # anchoring sentence in PageDoc.body
    raw: str  # markup between the ref delimiters
    sentence: int = 0  # index of the anchoring sentence


@dataclass
class PageDoc:
    page_id: str
    title: str
    body: str
    citations: list[Citation] = field(default_factory=list)


@dataclass(frozen=True)
class StatementRef:
    statement: str
    page_id: str
    url: str
    position: int
    title: str = ""

    @property
    def pair_id(self) -> str:
        return f"{self.page_id}:{self.position}:{self.url}"

    @property
    def statement_id(self) -> str:
        return f"{self.page_id}:{self.position}"

    def to_dict(self) -> dict:
        return {
            "statement": self.statement,
            "page_id": self.page_id,
            "title": self.title,
            "url": self.url,
            "position": self.position,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StatementRef":
        return cls(d["statement"], str(d["page_id"]), d["url"], int(d["position"]), d.get("title", ""))


# ---------------------------------------------------------------------------
# Sentence segmentation


@lru_cache(maxsize=1)
def abbreviations() -> frozenset[str]:
    text = resources.files("cmore.data").joinpath("abbreviations.txt").read_text("utf-8")
    return frozenset(
        line.strip().lower() for line in text.splitlines() if line.strip() and not line.startswith("#")
    )


_TERMINATOR_RE = re.compile(r"[.?!]+[\"'”’)\]]*(?=\s)")
_OPENERS = "\"'“‘(["


def _starts_sentence(text: str, pos: int) -> bool:
    while pos < len(text) and text[pos] in " \t":
        pos += 1
    if pos < len(text) and text[pos] in _OPENERS:
        pos += 1
    return pos < len(text) and text[pos].isupper()


def _is_abbreviation(text: str, dot: int) -> bool:
    """Whether the period at ``dot`` closes an abbreviation or an initial."""
    start = dot
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    word = text[start:dot].lstrip(_OPENERS)
    if len(word) == 1 and word.isupper():
        return True
    return word.lower() in abbreviations()


def _trimmed(text: str, start: int, end: int) -> tuple[int, int] | None:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return (start, end) if start < end else None


def segment_sentences(text: str) -> list[tuple[int, int]]:
    """Sentence spans over plain text.

    A sentence ends at ``.``, ``?`` or ``!`` (plus closing quotes/brackets)
    followed by whitespace and a capital letter, unless the period closes a
    listed abbreviation or a single-letter initial. Line breaks always end a
    sentence. Spans are ordered, disjoint and cover all non-whitespace text.
    """
    spans = []
    line_start = 0
    for line in text.split("\n"):
        line_end = line_start + len(line)
        seg_start = line_start
        for m in _TERMINATOR_RE.finditer(text, line_start, line_end):
            if not _starts_sentence(text, m.end()):
                continue
            if text[m.start()] == "." and m.end() - m.start() == 1 and _is_abbreviation(text, m.start()):
                continue
            if (span := _trimmed(text, seg_start, m.end())) is not None:
                spans.append(span)
            seg_start = m.end()
        if (span := _trimmed(text, seg_start, line_end)) is not None:
            spans.append(span)
        line_start = line_end + 1
    return spans


# ---------------------------------------------------------------------------
# Citation URLs


def is_absolute_http_url(url: str | None) -> bool:
    if not url or any(ch.isspace() for ch in url):
        return False
    try:
        parsed = urlparse(url)
    except ValueError:
        return False
    return parsed.scheme in ("http", "https") and bool(parsed.netloc) and bool(parsed.hostname)


def _balanced_templates(text: str) -> Iterator[str]:
    """Bodies of top-level ``{{...}}`` templates, nesting-aware."""
    depth, start, i = 0, 0, 0
    while i < len(text) - 1:
        pair = text[i : i + 2]
        if pair == "{{":
            if depth == 0:
                start = i + 2
            depth += 1
            i += 2
        elif pair == "}}" and depth:
            depth -= 1
            if depth == 0:
                yield text[start:i]
            i += 2
        else:
            i += 1


def _split_params(body: str) -> list[str]:
    parts, depth, cur = [], 0, []
    i = 0
    while i < len(body):
        two = body[i : i + 2]
        if two in ("{{", "[["):
            depth += 1
            cur.append(two)
            i += 2
            continue
        if two in ("}}", "]]") and depth:
            depth -= 1
            cur.append(two)
            i += 2
            continue
        if body[i] == "|" and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(body[i])
        i += 1
    parts.append("".join(cur))
    return parts


_BARE_URL_RE = re.compile(r"https?://[^\s\[\]<>|{}\"]+", re.IGNORECASE)


def extract_citation_url(raw_citation: str) -> str | None:
    """URL of a citation: a cite template's ``url=``, else the first bare http(s) URL."""
    for body in _balanced_templates(raw_citation):
        params = _split_params(body)
        name = params[0].strip().lower().replace("_", " ")
        if not (name.startswith("cite") or name == "citation"):
            continue
        for param in params[1:]:
            key, eq, value = param.partition("=")
            if eq and key.strip().lower() == "url":
                url = value.strip()
                if is_absolute_http_url(url):
                    return url
    m = _BARE_URL_RE.search(raw_citation)
    if m:
        url = m.group().rstrip(".,;:'")
        if is_absolute_http_url(url):
            return url
    return None


# ---------------------------------------------------------------------------
# Markup stripping


_COMMENT_RE = re.compile(r"<!--.*?(?:-->|$)", re.DOTALL)
_DROP_BLOCKS_RE = re.compile(
    r"<(math|gallery|timeline|score|syntaxhighlight|source|pre|imagemap|graph|chem|hiero)\b[^>]*>.*?</\1\s*>",
    re.DOTALL | re.IGNORECASE,
)
_REFERENCES_RE = re.compile(
    r"<references\b[^>]*/>|<references\b[^>]*>.*?</references\s*>", re.DOTALL | re.IGNORECASE
)
_REF_RE = re.compile(
    r"<ref\b([^>]*?)/>|<ref\b([^>]*)>(.*?)</ref\s*>", re.DOTALL | re.IGNORECASE
)
_REF_NAME_RE = re.compile(r"""\bname\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s/>]+))""", re.IGNORECASE)
_TEMPLATE_RE = re.compile(r"\{\{[^{}]*\}\}")
_TABLE_RE = re.compile(r"\{\|(?:(?!\{\|).)*?\|\}", re.DOTALL)
_WIKILINK_RE = re.compile(r"\[\[([^\[\]]*)\]\]([^\W\d_]*)")
_EXTLINK_RE = re.compile(r"\[(?:https?:)?//[^\s\]]*(?:\s+([^\]]*))?\]", re.IGNORECASE)
_BOLD_ITALIC_RE = re.compile(r"'{2,}")
_BR_RE = re.compile(r"<br\s*/?>", re.IGNORECASE)
_TAG_RE = re.compile(r"</?[a-zA-Z][^>]*>")
_HEADING_RE = re.compile(r"^=+.*=+$")
_MAGIC_RE = re.compile(r"__[A-Z]+__")
_DROP_LINK_NS = frozenset(
    {"file", "image", "category", "media", "wikipedia", "wp", "template", "help", "portal", "special"}
)


def _ref_name(attrs: str) -> str | None:
    m = _REF_NAME_RE.search(attrs or "")
    if not m:
        return None
    return next(g for g in m.groups() if g is not None).strip()


def _sub_until_stable(pattern: re.Pattern, repl, text: str) -> str:
    while True:
        new = pattern.sub(repl, text)
        if new == text:
            return text
        text = new


def _wikilink(m: re.Match) -> str:
    inner, trail = m.group(1), m.group(2)
    target, bar, label = inner.partition("|")
    target = target.strip()
    ns = target.lstrip(":").partition(":")[0].strip().lower() if ":" in target else ""
    if ns in _DROP_LINK_NS and not target.startswith(":"):
        return ""
    text = label if bar else target.lstrip(":")
    if bar and not label.strip():  # pipe trick: [[Paris, Texas|]]
        text = re.sub(r"\s*\(.*\)$", "", target).partition(",")[0]
    return text + trail


def strip_markup(wikitext: str) -> tuple[str, list[tuple[int, str]]]:
    """Plain text of a wikitext page plus the ``(body offset, raw markup)`` of each ref.

    Link display text is kept; templates, tables, files and categories are
    dropped. Refs are captured before any other stripping so cite templates
    survive. Paragraphs are separated by a single newline.
    """
    text = _COMMENT_RE.sub("", wikitext)
    text = _DROP_BLOCKS_RE.sub("", text)

    named: dict[str, str] = {}
    for m in _REF_RE.finditer(text):
        if m.group(3) is not None:
            name = _ref_name(m.group(2))
            if name and name not in named:
                named[name] = m.group(3)
    text = _REFERENCES_RE.sub("", text)

    raws: list[str] = []

    def ref_marker(m: re.Match) -> str:
        if m.group(3) is not None:
            raw = m.group(3)
        else:
            raw = named.get(_ref_name(m.group(1)) or "", "")
        raws.append(raw)
        return f"{_MARK_OPEN}{len(raws) - 1}{_MARK_CLOSE}"

    text = _REF_RE.sub(ref_marker, text)
    text = _sub_until_stable(_TEMPLATE_RE, "", text)
    text = _sub_until_stable(_TABLE_RE, "", text)
    text = _sub_until_stable(_WIKILINK_RE, _wikilink, text)
    text = _EXTLINK_RE.sub(lambda m: m.group(1) or "", text)
    text = _BOLD_ITALIC_RE.sub("", text)
    text = _BR_RE.sub(" ", text)
    text = _TAG_RE.sub("", text)
    text = _MAGIC_RE.sub("", text)
    text = html.unescape(text).replace(" ", " ")

    paragraphs: list[list[str]] = [[]]
    for line in text.split("\n"):
        line = line.strip()
        if not line:
            if paragraphs[-1]:
                paragraphs.append([])
            continue
        if _HEADING_RE.match(line) or line[0] in "{|!}" or line.startswith("[["):
            if paragraphs[-1]:
                paragraphs.append([])
            continue
        line = line.lstrip("*#:;").strip()
        if line:
            paragraphs[-1].append(line)
    body, markers = _assemble(" ".join(p) for p in paragraphs if p)
    return body, [(offset, raws[idx]) for idx, offset in markers]


_NO_SPACE_BEFORE = tuple(".,;:!?)")


def _assemble(paragraphs: Iterable[str]) -> tuple[str, list[tuple[int, int]]]:
    """Join paragraphs, dropping ref markers and recording ``(ref index, body offset)``."""
    out: list[str] = []
    length = 0
    markers: list[tuple[int, int]] = []

    for para in paragraphs:
        pieces = _MARKER_RE.split(para)
        buf = ""
        para_markers: list[tuple[int, int]] = []
        for i, piece in enumerate(pieces):
            if i % 2:
                para_markers.append((int(piece), len(buf)))
                continue
            piece = re.sub(r"\s+", " ", piece)
            if not buf:
                piece = piece.lstrip()
            elif buf.endswith(" ") and piece.startswith(" "):
                piece = piece[1:]
            if buf.endswith(" ") and piece.startswith(_NO_SPACE_BEFORE):
                buf = buf[:-1]
            buf += piece
        buf = buf.rstrip()
        if not buf:
            continue
        if out:
            out.append("\n")
            length += 1
        out.append(buf)
        markers.extend((idx, length + min(pos, len(buf))) for idx, pos in para_markers)
        length += len(buf)
    return "".join(out), markers


def page_from_wikitext(page_id: str, title: str, wikitext: str) -> PageDoc:
    """Strip a page and attribute each ref to the sentence just before its marker."""
    body, refs = strip_markup(wikitext)
    spans = segment_sentences(body)
    starts = [s for s, _ in spans]
    citations = []
    for offset, raw in refs:
        i = bisect.bisect_left(starts, offset) - 1
        if i >= 0:
            citations.append(Citation(spans[i], raw, i))
    return PageDoc(page_id, title, body, citations)


# ---------------------------------------------------------------------------
# Dump reading


def _open_text(path: Path) -> IO[str]:
    if path.suffix == ".bz2":
        return io.TextIOWrapper(bz2.open(path, "rb"), encoding="utf-8", errors="replace")
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", errors="replace")
    return open(path, encoding="utf-8", errors="replace")


def iter_page_records(chunks: Iterable[str]) -> Iterator[str]:
    """Cut a dump text stream into raw ``<page>...</page>`` records."""
    buf = ""
    for chunk in chunks:
        buf += chunk
        while True:
            start = buf.find("<page>")
            if start < 0:
                # Keep a tail in case "<page>" straddles chunks.
                buf = buf[-6:]
                break
            end = buf.find("</page>", start)
            if end < 0:
                buf = buf[start:]
                break
            nxt = buf.find("<page>", start + 6)
            if 0 <= nxt < end:
                # Unterminated record: emit it as-is so it is counted as malformed.
                yield buf[start:nxt]
                buf = buf[nxt:]
                continue
            yield buf[start : end + 7]
            buf = buf[end + 7 :]
    if "<page>" in buf:
        yield buf[buf.find("<page>") :]


def _local(tag: str) -> str:
    return tag.rpartition("}")[2]


def parse_record(record: str) -> tuple[PageDoc | None, str]:
    """Parse one raw page record. Returns the page, or ``None`` and a skip reason."""
    try:
        elem = ET.fromstring(record)
    except ET.ParseError:
        return None, "malformed"
    fields: dict[str, str] = {}
    redirect = False
    for child in elem.iter():
        name = _local(child.tag)
        if name == "redirect":
            redirect = True
        elif name in ("title", "ns", "text") and name not in fields:
            fields[name] = child.text or ""
        elif name == "id" and "id" not in fields:
            fields["id"] = (child.text or "").strip()
    if not fields.get("title") or not fields.get("id") or "text" not in fields:
        return None, "malformed"
    if fields.get("ns", "0").strip() != "0":
        return None, "non_article"
    text = fields["text"]
    if redirect or text.lstrip().upper().startswith("#REDIRECT"):
        return None, "redirect"
    return page_from_wikitext(fields["id"], fields["title"], text), "ok"


def _parse_file(path: Path) -> tuple[PageDoc | None, str]:
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError:
        return None, "malformed"
    if text.lstrip().upper().startswith("#REDIRECT"):
        return None, "redirect"
    return page_from_wikitext(path.stem, path.stem.replace("_", " "), text), "ok"


def _chunked(f: IO[str], size: int = 1 << 20) -> Iterator[str]:
    while chunk := f.read(size):
        yield chunk


def parse_dump(
    source: str | Path | Iterable[str], diagnostics: Counter | None = None, workers: int = 1
) -> Iterator[PageDoc]:
    """Article pages from an XML dump (plain, .bz2 or .gz), a directory of
    ``.wikitext`` files, or an iterable of dump text chunks.

    Redirects, non-article namespaces and malformed records are skipped and
    tallied in ``diagnostics`` under their reason; the stream never aborts.
    """
    tally = diagnostics if diagnostics is not None else Counter()
    f: IO[str] | None = None
    if isinstance(source, (str, Path)) and Path(source).is_dir():
        files = sorted(Path(source).glob("*.wikitext"))
        results = _map(_parse_file, files, workers)
    else:
        if isinstance(source, (str, Path)):
            f = _open_text(Path(source))
            chunks: Iterable[str] = _chunked(f)
        else:
            chunks = source
        results = _map(parse_record, iter_page_records(chunks), workers)
    try:
        for page, reason in results:
            tally[reason] += 1
            if page is not None:
                yield page
    finally:
        if f is not None:
            f.close()


def _map(fn, items, workers: int):
    if workers <= 1:
        yield from map(fn, items)
        return
    from multiprocessing import get_context

    with get_context("fork").Pool(workers) as pool:
        yield from pool.imap(fn, items, chunksize=32)


# ---------------------------------------------------------------------------
# Statement-reference pairs


def extract_statement_refs(
    page: PageDoc, min_words: int = MIN_STATEMENT_WORDS, max_words: int = MAX_STATEMENT_WORDS
) -> list[StatementRef]:
    """One pair per (cited sentence, distinct URL), in sentence then citation order."""
    out: list[StatementRef] = []
    seen: set[tuple[int, str]] = set()
    for cit in page.citations:
        url = extract_citation_url(cit.raw)
        if url is None or (cit.sentence, url) in seen:
            continue
        statement = page.body[cit.span[0] : cit.span[1]]
        if not min_words <= len(statement.split()) <= max_words:
            continue
        seen.add((cit.sentence, url))
        out.append(StatementRef(statement, page.page_id, url, cit.sentence, page.title))
    out.sort(key=lambda r: r.position)
    return out


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield json.loads(line)


def read_statement_refs(path: str | Path) -> Iterator[StatementRef]:
    for rec in read_jsonl(path):
        yield StatementRef.from_dict(rec)
