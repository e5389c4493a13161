"""Deterministic synthetic Wikipedia dumps with a matching offline reference mirror.

Used for the bundled fixture, tests and throughput checks::

    python -m cmore.synthetic OUT_DIR --pages 50 --seed 7
"""

from __future__ import annotations

import argparse
import random
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

from .fetchref import mirror_path

_SYLLABLES = (
    "ka", "lo", "mi", "ne", "ru", "ta", "vo", "shi", "ber", "dan", "fel", "gor", "hul", "jin",
    "kel", "lar", "mon", "nir", "pol", "quin", "ros", "sul", "tor", "ul", "vex", "wen", "yar", "zel",
)
_COMMON = (
    "the of and to in a was is for on that with as by at from his her it an were are which this "
    "be or has had its first one their after also new two who they been more other all into over "
    "during some time city when most where years later area team people under river town local "
    "region between before built since known including several part main near north south east west"
).split()
_NOUNS = ("ships", "soldiers", "workers", "students", "villages", "bridges", "aircraft", "people", "members", "vessels")
_MONTHS = (
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
)
_GPES = ("France", "Kenya", "Somalia", "Canada", "Peru", "Norway", "Japan", "Egypt", "Chile", "India", "London", "Nairobi", "Lima")
_ORGS = ("Royal Navy", "United Nations", "Red Cross", "World Bank", "European Union", "Indian Navy", "Reuters")
_GIVEN = ("John", "Mary", "Ahmed", "Pierre", "Anna", "Carlos", "Wei", "Olga", "Thomas", "Grace")
_FAMILY = ("Smith", "Okafor", "Laurent", "Ivanova", "Tanaka", "Moreno", "Hassan", "Keller", "Novak", "Brennan")
_LANGS = ("French", "Swahili", "Spanish", "Arabic", "Portuguese", "Japanese")


@dataclass
class Fact:
    statement: str
    evidence: str  # sentence planted in the reference document


def _vocab(rng: random.Random, size: int = 3000) -> list[str]:
    words = set()
    while len(words) < size:
        words.add("".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(2, 3))))
    return sorted(words)


class _Writer:
    def __init__(self, seed: int):
        self.rng = random.Random(seed)
        self.vocab = _vocab(self.rng)
        weights = [1.0 / (i + 10) for i in range(len(self.vocab))]
        self.weights = weights

    def filler(self, n: int) -> str:
        rng = self.rng
        words = rng.choices(self.vocab, weights=self.weights, k=n)
        for i in range(0, n, 3):
            words[i] = rng.choice(_COMMON)
        out, sentence = [], []
        for w in words:
            sentence.append(w)
            if len(sentence) >= rng.randint(9, 18):
                out.append(self._sentence(sentence))
                sentence = []
        if sentence:
            out.append(self._sentence(sentence))
        return " ".join(out)

    @staticmethod
    def _sentence(words: list[str]) -> str:
        s = " ".join(words)
        return s[0].upper() + s[1:] + "."

    def fact(self) -> Fact:
        rng = self.rng
        n = rng.randint(3, 950)
        year = rng.randint(1850, 2020)
        gpe = rng.choice(_GPES)
        org = rng.choice(_ORGS)
        noun = rng.choice(_NOUNS)
        kind = rng.randrange(9)
        topic = " ".join(rng.choices(self.vocab, k=2))
        if kind == 0:
            return Fact(
                f"The boarding crew freed {n} Iranian and Pakistani fishermen who had been held as hostages over two months.",
                f"The navy said it rescued {n} people who were being held hostage on the {topic} dhow.",
            )
        if kind == 1:
            return Fact(
                f"The {org} sent {n} {noun} to {gpe} in {year} to support the {topic} operation.",
                f"In {year} the {org} dispatched {n} {noun} to {gpe} for the {topic} mission.",
            )
        if kind == 2:
            name = f"{rng.choice(_GIVEN)} {rng.choice(_FAMILY)}"
            day, month = rng.randint(1, 28), rng.choice(_MONTHS)
            return Fact(
                f"{name} was born on {day} {month} {year} in {gpe} and later studied {topic}.",
                f"Born {day} {month} {year}, {name} grew up in {gpe} before turning to {topic}.",
            )
        if kind == 3:
            amount = rng.randint(2, 900)
            return Fact(
                f"The {topic} project cost ${amount} million and employed {n} workers at its peak.",
                f"Officials confirmed the {topic} scheme cost ${amount} million, with {n} workers hired.",
            )
        if kind == 4:
            pct, lang = rng.randint(2, 98), rng.choice(_LANGS)
            return Fact(
                f"About {pct}% of the residents of {gpe} speak {lang} at home according to the census.",
                f"The census found {pct}% of households in {gpe} speak {lang} daily.",
            )
        if kind == 5:
            km = rng.randint(2, 400)
            return Fact(
                f"The {topic} bridge spans {km} km across the river and opened in {year}.",
                f"Opened in {year}, the structure spans {km} km over the {topic} river valley.",
            )
        if kind == 6:
            return Fact(
                f"The {topic} festival is held every year in {gpe} and attracts visitors from abroad.",
                f"Visitors gather for the {topic} celebrations in {gpe} each summer.",
            )
        if kind == 7:
            # The reference supports the claim without repeating any entity.
            return Fact(
                f"The {topic} council approved {n} new permits for {gpe} fishermen last spring.",
                f"The {topic} council approved new permits for local fishermen.",
            )
        return Fact(
            f"The {topic} river is known for its clear water and its rich wildlife.",
            f"The {topic} river has clear water and rich wildlife.",
        )

    def reference_html(self, fact: Fact, words: int) -> str:
        rng = self.rng
        body = self.filler(words)
        sentences = body.split(". ")
        at = rng.randrange(len(sentences))
        sentences.insert(at, fact.evidence.rstrip("."))
        text = ". ".join(sentences)
        paras = []
        words_list = text.split(" ")
        for i in range(0, len(words_list), 90):
            paras.append("<p>" + escape(" ".join(words_list[i : i + 90])) + "</p>")
        return (
            "<html><head><title>" + escape(" ".join(rng.choices(self.vocab, k=3)).title())
            + "</title><style>p { margin: 0 }</style></head><body>"
            "<nav><a href='/'>Home</a> | <a href='/news'>News</a></nav>"
            "<script>var tracking = 1;</script>" + "".join(paras) + "</body></html>"
        )


def generate(
    out_dir: str | Path, pages: int = 50, seed: int = 7, reachable: float = 0.75,
    ref_words: tuple[int, int] = (250, 900), page_words: tuple[int, int] = (60, 220),
) -> dict:
    """Write ``dump.xml`` and ``mirror/`` under ``out_dir``; return summary counts."""
    out = Path(out_dir)
    mirror = out / "mirror"
    mirror.mkdir(parents=True, exist_ok=True)
    w = _Writer(seed)
    rng = w.rng
    counts = {"pages": 0, "articles": 0, "refs": 0, "mirrored": 0}
    with open(out / "dump.xml", "w", encoding="utf-8") as f:
        f.write('<mediawiki xmlns="http://www.mediawiki.org/xml/export-0.10/" xml:lang="en">\n')
        for i in range(pages):
            page_id = 1000 + i
            title = f"{' '.join(rng.choices(w.vocab, k=2)).title()} {i}"
            counts["pages"] += 1
            special = i % 25
            if special == 3:
                f.write(_page(title, page_id, "#REDIRECT [[Somewhere else]]", redirect=True))
                continue
            if special == 7:
                f.write(_page(f"Talk:{title}", page_id, "Discussion about sources.", ns=1))
                continue
            if special == 11:
                f.write(f"  <page>\n    <title>{escape(title)}</title>\n    <id>{page_id}</id>\n    <revision><text>broken &bogus; entity\n  </page>\n")
                continue
            counts["articles"] += 1
            parts = [f"'''{title}''' is a [[{rng.choice(_GPES)}|place]] in the [[{rng.choice(_GPES)}]] region."]
            n_facts = 0 if special == 19 else rng.randint(1, 5)
            named_used = None
            for j in range(n_facts):
                fact = w.fact()
                host = f"news{rng.randrange(40)}.example.org"
                url = f"https://{host}/{page_id}/{j}/{rng.randrange(10**6)}"
                style = rng.randrange(6)
                if style == 0:
                    ref = f"<ref>[{url} Report on {title}]</ref>"
                elif style == 1:
                    named_used = f"src{j}"
                    ref = f'<ref name="{named_used}">{{{{cite news|title=Story|url={url}|work=Daily}}}}</ref>'
                elif style == 2:
                    ref = f"<ref>{{{{cite book|title=An Offline Book|year=1999}}}}</ref>"
                else:
                    ref = f"<ref>{{{{cite web |url={url} |title=Article {j} |access-date=2020-01-01}}}}</ref>"
                counts["refs"] += 1
                parts.append(w.filler(rng.randint(*page_words) // 3))
                parts.append(f"{fact.statement}{ref}")
                if style == 1 and rng.random() < 0.5:
                    parts.append(f"{fact.statement.replace('The ', 'Reports say the ', 1)}<ref name=\"{named_used}\" />")
                if style != 2 and rng.random() < reachable:
                    ext = ".txt" if rng.random() < 0.15 else ".html"
                    html_doc = w.reference_html(fact, rng.randint(*ref_words))
                    if ext == ".txt":
                        from .fetchref import extract_html

                        html_doc = extract_html(html_doc.encode())[0]
                    path = mirror_path(mirror, url, ext)
                    path.parent.mkdir(parents=True, exist_ok=True)
                    path.write_text(html_doc, encoding="utf-8")
                    counts["mirrored"] += 1
            parts.append(w.filler(rng.randint(*page_words) // 2))
            text = (
                "{{Infobox place|name=" + title + "}}\n"
                + " ".join(parts[:2]) + "\n\n== History ==\n" + " ".join(parts[2:])
                + "\n\n== References ==\n{{Reflist}}\n[[Category:Synthetic places]]\n"
            )
            f.write(_page(title, page_id, text))
        f.write("</mediawiki>\n")
    return counts


def _page(title: str, page_id: int, text: str, ns: int = 0, redirect: bool = False) -> str:
    red = f'    <redirect title="{escape(title)}" />\n' if redirect else ""
    return (
        f"  <page>\n    <title>{escape(title)}</title>\n    <ns>{ns}</ns>\n    <id>{page_id}</id>\n{red}"
        f"    <revision>\n      <id>{page_id * 10}</id>\n"
        f'      <text xml:space="preserve">{escape(text)}</text>\n    </revision>\n  </page>\n'
    )


def main(argv: list[str] | None = None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    ap.add_argument("--pages", type=int, default=50)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--reachable", type=float, default=0.75)
    args = ap.parse_args(argv)
    print(generate(args.out_dir, args.pages, args.seed, args.reachable))


if __name__ == "__main__":
    main()
