from __future__ import annotations

import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from cmore.fetchref import (
    EvidenceCache,
    FetchError,
    FetchPolicy,
    FunnelReport,
    HostLimiter,
    extract_text,
    fetch,
    filter_reachable,
    mirror_path,
    normalize_url,
    resolve,
    url_key,
)
from cmore.wikiparse import StatementRef


def _pair(i: int, url: str) -> StatementRef:
    return StatementRef(f"Statement number {i} about things.", "1", url, i)


def test_policy_validation():
    with pytest.raises(ValueError):
        FetchPolicy(timeout=0)
    with pytest.raises(ValueError):
        FetchPolicy(max_body_bytes=0)


def test_url_normalisation_and_key():
    assert normalize_url("HTTP://Example.ORG:80/a?b=1#frag") == "http://example.org/a?b=1"
    assert normalize_url("https://x.org") == "https://x.org/"
    assert url_key("https://X.org/#y") == url_key("https://x.org/")
    assert len(url_key("https://x.org")) == 64


def test_mirror_fetch(tmp_path):
    url = "https://news.example.org/a"
    path = mirror_path(tmp_path, url)
    path.parent.mkdir(parents=True)
    path.write_bytes(b"<p>rescued 14 people</p>")
    policy = FetchPolicy(offline_mirror=tmp_path)
    result = fetch(url, policy)
    assert result.body == b"<p>rescued 14 people</p>" and result.content_type == "text/html"
    with pytest.raises(FetchError) as err:
        fetch("https://news.example.org/missing", policy)
    assert err.value.reason == "not_found"
    with pytest.raises(FetchError) as err:
        fetch(url, FetchPolicy(offline_mirror=tmp_path, max_body_bytes=5))
    assert err.value.reason == "too_large"
    with pytest.raises(FetchError) as err:
        fetch("ftp://x.org/a", policy)
    assert err.value.reason == "invalid_url"


def test_extract_text_examples():
    assert extract_text(b"<p>rescued 14 people</p>", "text/html") == "rescued 14 people"
    assert extract_text(b"<script>x()</script><p>A</p>", "text/html") == "A"
    assert extract_text(b"  plain   text\n\n here ", "text/plain") == "plain text\nhere"
    html = b"<html><head><title>T</title><style>b{}</style></head><body><nav>Menu</nav><div>One &amp; two</div><p>Three</p></body></html>"
    assert extract_text(html, "text/html; charset=utf-8") == "One & two\nThree"
    assert extract_text(b"caf\xe9 \xff ok", "text/plain") == "caf� � ok"
    assert extract_text(b"caf\xe9", "text/plain; charset=latin-1") == "café"


def test_funnel_ten_pairs_four_mirrored(tmp_path):
    pairs = [_pair(i, f"https://h{i % 3}.org/{i}") for i in range(10)]
    for p in pairs[:4]:
        path = mirror_path(tmp_path, p.url)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(f"<p>Evidence {p.position}</p>")
    report = FunnelReport()
    out = list(filter_reachable(pairs, FetchPolicy(offline_mirror=tmp_path), report))
    assert [p for p, _ in out] == pairs[:4]
    assert report.to_dict() == {"input": 10, "output": 4, "drops": {"not_found": 6}}
    assert out[0][1].text == "Evidence 0"


def test_funnel_empty_input(tmp_path):
    report = FunnelReport()
    assert list(filter_reachable([], FetchPolicy(offline_mirror=tmp_path), report)) == []
    assert report.to_dict() == {"input": 0, "output": 0, "drops": {}}


def test_drop_reasons_in_mirror(tmp_path):
    urls = {
        "empty": "https://a.org/empty",
        "binary": "https://a.org/bin",
        "ok": "https://a.org/ok",
    }
    mirror_path(tmp_path, urls["empty"]).parent.mkdir(parents=True, exist_ok=True)
    mirror_path(tmp_path, urls["empty"]).write_text("<script>only()</script>")
    p = mirror_path(tmp_path, urls["binary"], ".pdf")
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(b"%PDF")
    p = mirror_path(tmp_path, urls["ok"], ".txt")
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("Plain evidence")
    pairs = [_pair(i, u) for i, u in enumerate(urls.values())] + [_pair(9, "not a url")]
    report = FunnelReport()
    out = list(filter_reachable(pairs, FetchPolicy(offline_mirror=tmp_path), report))
    assert [e.text for _, e in out] == ["Plain evidence"]
    assert report.drops == {"empty_text": 1, "bad_media_type": 1, "invalid_url": 1}
    assert report.output + sum(report.drops.values()) == report.input


def test_cache_skips_refetch(tmp_path):
    mirror = tmp_path / "m"
    url = "https://a.org/x"
    p = mirror_path(mirror, url)
    p.parent.mkdir(parents=True)
    p.write_text("<p>cached text</p>")
    cache = EvidenceCache(tmp_path / "cache")
    policy = FetchPolicy(offline_mirror=mirror)
    first = list(filter_reachable([_pair(0, url), _pair(1, "https://a.org/gone")], policy, cache=cache))
    p.unlink()
    second = list(filter_reachable([_pair(0, url), _pair(1, "https://a.org/gone")], policy, cache=cache))
    assert [e.text for _, e in second] == [e.text for _, e in first] == ["cached text"]
    assert isinstance(cache.get("https://a.org/gone"), FetchError)


class _Handler(BaseHTTPRequestHandler):
    hits: list[tuple[str, float]] = []

    def do_GET(self):  # noqa: N802
        _Handler.hits.append((self.path, time.monotonic()))
        if self.path.startswith("/ok"):
            body = b"<html><title>Page</title><p>rescued 14 people</p></html>"
            self.send_response(200)
            self.send_header("Content-Type", "text/html; charset=utf-8")
        elif self.path == "/big":
            body = b"x" * 5000
            self.send_response(200)
            self.send_header("Content-Type", "text/plain")
        elif self.path == "/json":
            body = b"{}"
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
        elif self.path == "/slow":
            time.sleep(0.5)
            body = b"late"
            self.send_response(200)
            self.send_header("Content-Type", "text/plain")
        elif self.path == "/error":
            body = b"oops"
            self.send_response(503)
        else:
            body = b"missing"
            self.send_response(404)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture()
def server():
    _Handler.hits = []
    srv = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()
    srv.server_close()


def test_online_fetch_and_failures(server):
    policy = FetchPolicy(timeout=2, max_retries=0, per_host_delay=0, max_body_bytes=1000)
    ev = resolve(f"{server}/ok", policy)
    assert ev.text == "rescued 14 people" and ev.title == "Page" and ev.content_type == "text/html"
    for path, reason in (("/missing", "not_found"), ("/error", "http_status"), ("/big", "too_large"),
                         ("/json", "bad_media_type")):
        with pytest.raises(FetchError) as err:
            resolve(f"{server}{path}", policy)
        assert err.value.reason == reason, path
    with pytest.raises(FetchError) as err:
        fetch(f"{server}/slow", FetchPolicy(timeout=0.1, max_retries=1, per_host_delay=0))
    assert err.value.reason == "timeout"
    assert sum(1 for p, _ in _Handler.hits if p == "/slow") == 2


def test_per_host_spacing(server):
    delay = 0.15
    pairs = [_pair(i, f"{server}/ok/{i}") for i in range(5)]
    policy = FetchPolicy(timeout=2, per_host_delay=delay, max_in_flight=4)
    report = FunnelReport()
    out = list(filter_reachable(pairs, policy, report, threads=4))
    assert [p for p, _ in out] == pairs
    times = sorted(t for _, t in _Handler.hits)
    assert len(times) == 5
    gaps = [b - a for a, b in zip(times, times[1:])]
    assert min(gaps) >= delay * 0.95


def test_host_limiter_log():
    limiter = HostLimiter(0.05)
    for _ in range(3):
        limiter.run("a", lambda: None)
        limiter.run("b", lambda: None)
    for host in ("a", "b"):
        ts = [t for h, t in limiter.log if h == host]
        assert all(b - a >= 0.05 for a, b in zip(ts, ts[1:]))
