"""Reference fetching, reachability filtering and HTML-to-text extraction.

Offline mirror layout: the body of URL ``u`` lives at
``<mirror>/<h[:2]>/<h>.html`` (served as text/html) or ``<h>.txt``
(text/plain), where ``h = url_key(u)`` is the SHA-256 hex digest of the
normalized URL. Any other extension is served as application/octet-stream.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import socket
import threading
import time
import urllib.error
import urllib.request
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterable, Iterator
from urllib.parse import urlsplit, urlunsplit

from .wikiparse import StatementRef, is_absolute_http_url

logger = logging.getLogger(__name__)

TEXT_TYPES = ("text/html", "application/xhtml+xml", "text/plain")
_EXT_TYPES = {".html": "text/html", ".htm": "text/html", ".txt": "text/plain"}


class FetchError(Exception):
    """A failed fetch. ``reason`` is one of the tallied failure classes."""

    REASONS = (
        "invalid_url", "not_found", "timeout", "dns", "http_status",
        "too_large", "bad_media_type", "network_error", "empty_text",
    )

    def __init__(self, reason: str, detail: str = ""):
        assert reason in self.REASONS, reason
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True)
class FetchPolicy:
    timeout: float = 10.0
    max_retries: int = 2
    per_host_delay: float = 1.0
    max_body_bytes: int = 5_000_000
    offline_mirror: Path | None = None
    max_in_flight: int = 16
    user_agent: str = "cmore-fetch/0.1"

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_body_bytes <= 0:
            raise ValueError("max_body_bytes must be positive")
        if self.max_retries < 0 or self.per_host_delay < 0:
            raise ValueError("max_retries and per_host_delay must be non-negative")


@dataclass
class FetchResult:
    url: str
    status: int
    content_type: str
    body: bytes


@dataclass
class Evidence:
    url: str
    text: str
    fetched_at: str
    content_type: str
    title: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def normalize_url(url: str) -> str:
    parts = urlsplit(url.strip())
    scheme = parts.scheme.lower()
    host = (parts.hostname or "").lower()
    port = parts.port
    if port and not ((scheme == "http" and port == 80) or (scheme == "https" and port == 443)):
        host = f"{host}:{port}"
    if parts.username:
        host = f"{parts.username}@{host}"
    return urlunsplit((scheme, host, parts.path or "/", parts.query, ""))


def url_key(url: str) -> str:
    return hashlib.sha256(normalize_url(url).encode("utf-8")).hexdigest()


def mirror_path(mirror: Path, url: str, ext: str = ".html") -> Path:
    key = url_key(url)
    return Path(mirror) / key[:2] / f"{key}{ext}"


class HostLimiter:
    """Serializes requests per host and spaces them by at least ``delay`` seconds."""

    def __init__(self, delay: float):
        self.delay = delay
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}
        self._last: dict[str, float] = {}
        self.log: list[tuple[str, float]] = []

    def _lock(self, host: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(host, threading.Lock())

    def run(self, host: str, fn):
        with self._lock(host):
            last = self._last.get(host)
            if last is not None:
                wait = last + self.delay - time.monotonic()
                if wait > 0:
                    time.sleep(wait)
            started = time.monotonic()
            self.log.append((host, started))
            try:
                return fn()
            finally:
                self._last[host] = started


def _fetch_mirror(url: str, policy: FetchPolicy) -> FetchResult:
    key = url_key(url)
    folder = Path(policy.offline_mirror) / key[:2]
    matches = sorted(folder.glob(f"{key}.*")) if folder.is_dir() else []
    if not matches:
        raise FetchError("not_found", url)
    path = matches[0]
    if path.stat().st_size > policy.max_body_bytes:
        raise FetchError("too_large", f"{path.stat().st_size} bytes")
    content_type = _EXT_TYPES.get(path.suffix, "application/octet-stream")
    return FetchResult(url, 200, content_type, path.read_bytes())


def _fetch_online(url: str, policy: FetchPolicy) -> FetchResult:
    req = urllib.request.Request(url, headers={"User-Agent": policy.user_agent})
    try:
        with urllib.request.urlopen(req, timeout=policy.timeout) as resp:
            length = resp.headers.get("Content-Length")
            if length and length.isdigit() and int(length) > policy.max_body_bytes:
                raise FetchError("too_large", f"{length} bytes")
            body = resp.read(policy.max_body_bytes + 1)
            if len(body) > policy.max_body_bytes:
                raise FetchError("too_large", f"> {policy.max_body_bytes} bytes")
            return FetchResult(url, resp.status, resp.headers.get("Content-Type", ""), body)
    except urllib.error.HTTPError as exc:
        raise FetchError("not_found" if exc.code in (404, 410) else "http_status", str(exc.code)) from exc
    except urllib.error.URLError as exc:
        if isinstance(exc.reason, socket.gaierror):
            raise FetchError("dns", str(exc.reason)) from exc
        if isinstance(exc.reason, (socket.timeout, TimeoutError)):
            raise FetchError("timeout", str(exc.reason)) from exc
        raise FetchError("network_error", str(exc.reason)) from exc
    except (socket.timeout, TimeoutError) as exc:
        raise FetchError("timeout", str(exc)) from exc
    except (OSError, ValueError) as exc:
        raise FetchError("network_error", str(exc)) from exc


def fetch(url: str, policy: FetchPolicy, limiter: HostLimiter | None = None) -> FetchResult:
    """GET ``url`` (or read it from the offline mirror). Raises :class:`FetchError`."""
    if not is_absolute_http_url(url):
        raise FetchError("invalid_url", url)
    if policy.offline_mirror is not None:
        return _fetch_mirror(url, policy)
    limiter = limiter or HostLimiter(policy.per_host_delay)
    host = (urlsplit(url).hostname or "").lower()
    for attempt in range(policy.max_retries + 1):
        try:
            result = limiter.run(host, lambda: _fetch_online(url, policy))
        except FetchError as exc:
            # Retry only transient failures.
            if exc.reason in ("timeout", "network_error") and attempt < policy.max_retries:
                continue
            raise
        if not 200 <= result.status < 300:
            raise FetchError("http_status", str(result.status))
        return result
    raise AssertionError("unreachable")


class _TextExtractor(HTMLParser):
    SKIP = frozenset({"script", "style", "nav", "noscript", "template", "svg", "head", "title"})
    BLOCK = frozenset({
        "p", "div", "br", "li", "ul", "ol", "dl", "dt", "dd", "h1", "h2", "h3", "h4", "h5", "h6",
        "tr", "td", "th", "table", "section", "article", "header", "footer", "aside", "main",
        "blockquote", "pre", "hr", "figure", "figcaption", "form", "address",
    })

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self.title: list[str] = []
        self._skip = 0
        self._in_title = False

    def handle_starttag(self, tag, attrs):
        if tag == "title":
            self._in_title = True
        if tag in self.SKIP:
            self._skip += 1
        elif tag in self.BLOCK:
            self.parts.append("\n")

    def handle_startendtag(self, tag, attrs):
        if tag in self.BLOCK:
            self.parts.append("\n")

    def handle_endtag(self, tag):
        if tag == "title":
            self._in_title = False
        if tag in self.SKIP:
            self._skip = max(0, self._skip - 1)
        elif tag in self.BLOCK:
            self.parts.append("\n")

    def handle_data(self, data):
        if self._in_title:
            self.title.append(data)
        if not self._skip:
            self.parts.append(data)


def normalize_whitespace(text: str) -> str:
    lines = (" ".join(line.split()) for line in text.splitlines())
    return "\n".join(line for line in lines if line)


def _charset(content_type: str) -> str:
    m = re.search(r"charset=([\w.-]+)", content_type or "", re.IGNORECASE)
    return m.group(1) if m else "utf-8"


def decode_body(body: bytes, content_type: str = "") -> str:
    try:
        return body.decode(_charset(content_type), errors="replace")
    except LookupError:
        return body.decode("utf-8", errors="replace")


def media_type(content_type: str) -> str:
    return (content_type or "").split(";")[0].strip().lower()


def extract_html(body: bytes, content_type: str = "text/html") -> tuple[str, str]:
    """``(text, title)`` of an HTML document."""
    parser = _TextExtractor()
    parser.feed(decode_body(body, content_type))
    parser.close()
    return normalize_whitespace("".join(parser.parts)), " ".join("".join(parser.title).split())


def extract_text(body: bytes, content_type: str) -> str:
    """Plain text of an HTML or plain-text body; undecodable bytes become U+FFFD."""
    if media_type(content_type) in ("text/html", "application/xhtml+xml"):
        return extract_html(body, content_type)[0]
    return normalize_whitespace(decode_body(body, content_type))


def to_evidence(result: FetchResult) -> Evidence:
    mtype = media_type(result.content_type)
    if mtype not in TEXT_TYPES:
        raise FetchError("bad_media_type", mtype or "missing")
    if mtype == "text/plain":
        text, title = extract_text(result.body, result.content_type), ""
    else:
        text, title = extract_html(result.body, result.content_type)
    if not text:
        raise FetchError("empty_text", result.url)
    return Evidence(
        url=result.url, text=text, fetched_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        content_type=mtype, title=title,
    )


@dataclass
class FunnelReport:
    input: int = 0
    output: int = 0
    drops: Counter = field(default_factory=Counter)

    def to_dict(self) -> dict:
        return {"input": self.input, "output": self.output, "drops": dict(sorted(self.drops.items()))}

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


class EvidenceCache:
    """On-disk evidence keyed by URL hash; failures are cached too so re-runs skip them."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _path(self, url: str) -> Path:
        key = url_key(url)
        return self.root / key[:2] / f"{key}.json"

    def get(self, url: str) -> Evidence | FetchError | None:
        path = self._path(url)
        if not path.exists():
            return None
        rec = json.loads(path.read_text(encoding="utf-8"))
        if rec.get("ok"):
            return Evidence(**rec["evidence"])
        return FetchError(rec["reason"])

    def put(self, url: str, value: Evidence | FetchError) -> None:
        path = self._path(url)
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(value, Evidence):
            rec = {"ok": True, "evidence": value.to_dict()}
        else:
            rec = {"ok": False, "reason": value.reason}
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(rec, ensure_ascii=False), encoding="utf-8")
        tmp.replace(path)


def resolve(url: str, policy: FetchPolicy, limiter: HostLimiter | None = None) -> Evidence:
    """Fetch ``url`` and extract its evidence text. Raises :class:`FetchError`."""
    return to_evidence(fetch(url, policy, limiter))


def filter_reachable(
    pairs: Iterable[StatementRef],
    policy: FetchPolicy,
    report: FunnelReport | None = None,
    cache: EvidenceCache | None = None,
    threads: int = 1,
    batch_size: int = 256,
) -> Iterator[tuple[StatementRef, Evidence]]:
    """Keep the pairs whose reference resolves to non-empty text.

    Each distinct URL is fetched once per batch (and once overall when a
    ``cache`` is given). Fetches run concurrently across hosts
    (serialized per host) in batches; pairs are emitted in input order.
    ``report`` accumulates input/output counts and per-reason drops.
    """
    report = report if report is not None else FunnelReport()
    limiter = HostLimiter(policy.per_host_delay)

    def lookup(url: str) -> Evidence | FetchError:
        if cache is not None and (hit := cache.get(url)) is not None:
            return hit
        try:
            value: Evidence | FetchError = resolve(url, policy, limiter)
        except FetchError as exc:
            value = exc
        if cache is not None:
            cache.put(url, value)
        return value

    workers = max(1, min(threads, policy.max_in_flight))
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        batch: list[StatementRef] = []
        for pair in _with_sentinel(pairs):
            if pair is not None:
                batch.append(pair)
                if len(batch) < batch_size:
                    continue
            if not batch:
                continue
            todo = sorted({p.url for p in batch})
            values = pool.map(lookup, todo) if pool else map(lookup, todo)
            resolved = dict(zip(todo, values))
            for p in batch:
                report.input += 1
                value = resolved[p.url]
                if isinstance(value, Evidence):
                    report.output += 1
                    yield p, value
                else:
                    report.drops[value.reason] += 1
            batch = []
    finally:
        if pool:
            pool.shutdown()


def _with_sentinel(items: Iterable):
    yield from items
    yield None
