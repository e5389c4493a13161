from __future__ import annotations

import bz2
import random
from collections import Counter

from hypothesis import given, settings
from hypothesis import strategies as st

from cmore.wikiparse import (
    StatementRef,
    extract_citation_url,
    extract_statement_refs,
    is_absolute_http_url,
    page_from_wikitext,
    parse_dump,
    read_statement_refs,
    segment_sentences,
    strip_markup,
    write_jsonl,
)
from conftest import HOSTAGE_STATEMENT


def _texts(text):
    return [text[s:e] for s, e in segment_sentences(text)]


def _page(title, page_id, text, ns=0, redirect=False):
    red = '<redirect title="X" />' if redirect else ""
    esc = text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    return f"<page><title>{title}</title><ns>{ns}</ns><id>{page_id}</id>{red}<revision><text>{esc}</text></revision></page>\n"


def test_segment_examples():
    assert segment_sentences("") == []
    assert _texts("A b. C d.") == ["A b.", "C d."]
    assert _texts("Dr. Smith arrived. He left.") == ["Dr. Smith arrived.", "He left."]


def test_segment_guards():
    assert _texts("It cost 3.5 million. Then U.S. Navy ships left.") == [
        "It cost 3.5 million.", "Then U.S. Navy ships left.",
    ]
    assert _texts("J. R. Tolkien wrote it. Really?  Yes! \"Quoted.\" Next") == [
        "J. R. Tolkien wrote it.", "Really?", "Yes!", '"Quoted."', "Next",
    ]
    assert _texts("no capital. after this") == ["no capital. after this"]
    assert _texts("Line one\nLine two") == ["Line one", "Line two"]


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet=st.sampled_from("Ab c.?!\n \"Dr"), max_size=200))
def test_segment_spans_cover_non_whitespace(text):
    spans = segment_sentences(text)
    prev_end = 0
    covered = set()
    for s, e in spans:
        assert prev_end <= s < e <= len(text)
        assert not text[s].isspace() and not text[e - 1].isspace()
        covered.update(range(s, e))
        prev_end = e
    assert {i for i, ch in enumerate(text) if not ch.isspace()} <= covered


def test_citation_url_examples():
    assert extract_citation_url("{{cite web|url=https://x.org/a|title=T}}") == "https://x.org/a"
    assert extract_citation_url("see Smith 1990") is None
    assert extract_citation_url("[https://y.org/b report]") == "https://y.org/b"


def test_citation_url_variants():
    assert extract_citation_url("{{Cite news |title=A |url= http://n.com/x?a=1&b=2 |work=W}}") == "http://n.com/x?a=1&b=2"
    assert extract_citation_url("{{cite book|title=B|year=1999}}") is None
    assert extract_citation_url("{{cite web|url=ftp://old.org/f}} see https://ok.org/p.") == "https://ok.org/p"
    assert extract_citation_url("{{cite web|title={{lang|fr|X}}|url=https://z.org}}") == "https://z.org"
    assert not is_absolute_http_url("//relative.org/a")
    assert not is_absolute_http_url("mailto:x@y.org")


def test_strip_markup_keeps_text_and_records_refs():
    body, refs = strip_markup(
        "{{Infobox|a=b}}'''Bold''' [[Paris|city]] and [[London]]s.<ref>{{cite web|url=https://a.org}}</ref> "
        "[[File:x.jpg|thumb|cap]] [https://e.org link text] here.<!-- hidden -->\n\n"
        "{| class=wikitable\n|cell\n|}\n== Heading ==\nNext &amp; para.<ref name=\"n\">https://b.org</ref>"
        "<ref name=\"n\" />\n[[Category:Things]]"
    )
    assert body == "Bold city and Londons. link text here.\nNext & para."
    assert [raw for _, raw in refs] == ["{{cite web|url=https://a.org}}", "https://b.org", "https://b.org"]
    assert "<ref" not in body and "\ue000" not in body
    assert refs[0][0] == body.index(" link")


def test_page_without_refs_has_no_citations():
    page = page_from_wikitext("1", "T", "Just a sentence with no refs at all. Another one here.")
    assert page.citations == []
    assert extract_statement_refs(page) == []


def test_single_cite_web_anchors_to_its_sentence():
    page = page_from_wikitext(
        "1", "T",
        "Intro sentence with enough words here. The bridge opened to traffic in the year 1990."
        "<ref>{{cite web|url=https://news.example.org/b|title=B}}</ref> Later text follows here.",
    )
    (cit,) = page.citations
    assert page.body[cit.span[0] : cit.span[1]] == "The bridge opened to traffic in the year 1990."
    assert 0 <= cit.span[0] < cit.span[1] <= len(page.body)


def test_hostage_statement_pair():
    page = page_from_wikitext(
        "42", "Piracy", f"Some context first. {HOSTAGE_STATEMENT}<ref>[https://news.example.com/somalia freed]</ref>"
    )
    (ref,) = extract_statement_refs(page)
    assert ref == StatementRef(HOSTAGE_STATEMENT, "42", "https://news.example.com/somalia", 1, "Piracy")
    assert ref.statement in page.body


def test_two_refs_one_sentence_give_two_pairs():
    page = page_from_wikitext(
        "1", "T",
        "The council approved nine new permits last spring.<ref>https://a.org/1</ref>"
        "<ref>{{cite news|url=https://b.org/2}}</ref><ref>https://a.org/1</ref>",
    )
    refs = extract_statement_refs(page)
    assert [r.url for r in refs] == ["https://a.org/1", "https://b.org/2"]
    assert refs[0].statement == refs[1].statement


def test_statement_length_bounds():
    page = page_from_wikitext("1", "T", "Too short.<ref>https://a.org</ref>")
    assert extract_statement_refs(page) == []
    long = " ".join(["word"] * 121) + ".<ref>https://a.org</ref>"
    assert extract_statement_refs(page_from_wikitext("1", "T", long)) == []


def test_parse_dump_filters_and_tallies(tmp_path):
    dump = (
        "<mediawiki>\n"
        + _page("Good", 1, "A sentence that cites things well.<ref>https://a.org/x</ref>")
        + _page("Gone", 2, "#REDIRECT [[Good]]", redirect=True)
        + _page("Talk:Good", 3, "chat", ns=1)
        + "<page><title>Bad</title><id>4</id><revision><text>&bogus;</text></page>\n"
        + _page("Empty", 5, "No refs here at all.")
        + "</mediawiki>\n"
    )
    tally = Counter()
    pages = list(parse_dump([dump[i : i + 7] for i in range(0, len(dump), 7)], tally))
    assert [p.title for p in pages] == ["Good", "Empty"]
    assert tally == Counter(ok=2, redirect=1, non_article=1, malformed=1)

    path = tmp_path / "dump.xml.bz2"
    path.write_bytes(bz2.compress(dump.encode()))
    assert [p.page_id for p in parse_dump(path)] == ["1", "5"]


def test_parse_dump_directory(tmp_path):
    (tmp_path / "Alpha_Page.wikitext").write_text("Alpha cites a fine source here.<ref>https://a.org</ref>")
    (tmp_path / "Beta.wikitext").write_text("#REDIRECT [[Alpha]]")
    tally = Counter()
    (page,) = parse_dump(tmp_path, tally)
    assert page.title == "Alpha Page" and len(page.citations) == 1
    assert tally == Counter(ok=1, redirect=1)


def test_fixture_dump_yields_pairs(fixture_dir, tmp_path):
    tally = Counter()
    refs = [r for p in parse_dump(fixture_dir / "dump.xml", tally) for r in extract_statement_refs(p)]
    assert len(refs) > 0
    assert tally["malformed"] >= 1 and tally["redirect"] >= 1 and tally["non_article"] >= 1
    assert all(is_absolute_http_url(r.url) and extract_citation_url(r.url) == r.url for r in refs)
    path = tmp_path / "refs.jsonl"
    write_jsonl(path, (r.to_dict() for r in refs))
    assert list(read_statement_refs(path)) == refs


def test_statements_are_body_substrings_and_deterministic():
    rng = random.Random(3)
    for _ in range(30):
        parts = []
        for i in range(rng.randint(1, 6)):
            parts.append(f"Sentence number {i} has several plain words inside it.")
            if rng.random() < 0.6:
                parts[-1] += f"<ref>https://h{rng.randrange(3)}.org/{i}</ref>"
        text = " ".join(parts)
        page = page_from_wikitext("9", "T", text)
        refs = extract_statement_refs(page)
        assert refs == extract_statement_refs(page_from_wikitext("9", "T", text))
        for r in refs:
            assert r.statement in page.body and r.statement.endswith(".")


def test_parse_dump_parallel_matches_serial(fixture_dir):
    serial = list(parse_dump(fixture_dir / "dump.xml"))
    parallel = list(parse_dump(fixture_dir / "dump.xml", workers=2))
    assert serial == parallel
